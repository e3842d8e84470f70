//! Assembly of per-bin feature frames from raw feeds.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{IncidentStatus, Minutes, NetworkModel, WeatherRecord, SPEED_STEP, WEATHER_STEP};

use super::calendar::{minute_of_day, Calendar};
use super::feeds::{read_jsonl, write_jsonl, Feeds, SpeedRecord};
use super::incidents::{fuse_incidents, AlertEvent, ClosureEvent};
use super::scaler::MinMaxScaler;
use super::speed::{impute_speed, reference_speed, slowdown_at, tti};
use super::weather::{hourly_slots, interpolate_weather};
use super::IngestError;

/// Unscaled fused features at one 5-minute bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub timestamp: Minutes,
    /// mph, imputed.
    pub speeds: Vec<f64>,
    pub tti: Vec<f64>,
    /// mph.
    pub slowdown: Vec<f64>,
    pub incident_status: Vec<IncidentStatus>,
    /// See [`crate::domain::WEATHER_FIELDS`].
    pub weather: [f64; 7],
    pub time_features: Vec<f64>,
}

/// Model-ready frame: speeds, slowdowns and weather min-max scaled with a
/// scaler fitted on training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub timestamp: Minutes,
    pub speeds_scaled: Vec<f64>,
    pub tti: Vec<f64>,
    pub tti_scaled: Vec<f64>,
    pub slowdown: Vec<f64>,
    pub slowdown_scaled: Vec<f64>,
    pub incident_status: Vec<IncidentStatus>,
    pub weather_scaled: [f64; 7],
    pub time_features: Vec<f64>,
}

/// Scaler state for every continuous frame component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScaler {
    pub speed: MinMaxScaler,
    pub tti: MinMaxScaler,
    pub slowdown: MinMaxScaler,
    pub weather: MinMaxScaler,
}

impl FrameScaler {
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a RawFrame> + Clone) -> Option<Self> {
        Some(Self {
            speed: MinMaxScaler::fit(frames.clone().into_iter().map(|f| f.speeds.as_slice()))?,
            tti: MinMaxScaler::fit(frames.clone().into_iter().map(|f| f.tti.as_slice()))?,
            slowdown: MinMaxScaler::fit(frames.clone().into_iter().map(|f| f.slowdown.as_slice()))?,
            weather: MinMaxScaler::fit(frames.into_iter().map(|f| &f.weather[..]))?,
        })
    }

    pub fn apply(&self, f: &RawFrame) -> FeatureFrame {
        let mut weather_scaled = [0.0; 7];
        for (j, w) in weather_scaled.iter_mut().enumerate() {
            *w = self.weather.scale(j, f.weather[j]);
        }
        FeatureFrame {
            timestamp: f.timestamp,
            speeds_scaled: self.speed.scale_row(&f.speeds),
            tti: f.tti.clone(),
            tti_scaled: self.tti.scale_row(&f.tti),
            slowdown: f.slowdown.clone(),
            slowdown_scaled: self.slowdown.scale_row(&f.slowdown),
            incident_status: f.incident_status.clone(),
            weather_scaled,
            time_features: f.time_features.clone(),
        }
    }

    /// Scaled speed back to mph for segment `i`.
    pub fn unscale_speed(&self, i: usize, s: f64) -> f64 {
        self.speed.unscale(i, s)
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    /// Inclusive minute-of-day range of bins to emit; `None` keeps all bins.
    pub day_window: Option<(Minutes, Minutes)>,
    pub calendar: Calendar,
    /// Replace file reference speeds with the empirical 85th percentile.
    pub empirical_reference: bool,
}

pub struct IngestOutput {
    pub network: NetworkModel,
    pub frames: Vec<RawFrame>,
}

fn in_window(t: Minutes, window: Option<(Minutes, Minutes)>) -> bool {
    match window {
        None => true,
        Some((a, b)) => {
            let m = minute_of_day(t);
            m >= a && m <= b
        }
    }
}

/// Batch ingest of a whole feed directory into time-ordered raw frames.
pub fn build_frames(model: &NetworkModel, feeds: &Feeds, opts: &IngestOptions) -> Result<IngestOutput, IngestError> {
    let (first, last) = feeds
        .speeds
        .iter()
        .fold(None, |acc: Option<(Minutes, Minutes)>, r| {
            let t = r.timestamp.div_euclid(SPEED_STEP) * SPEED_STEP;
            Some(match acc {
                None => (t, t),
                Some((a, b)) => (a.min(t), b.max(t)),
            })
        })
        .ok_or(IngestError::EmptyFeed("speeds"))?;
    let bins: Vec<Minutes> = (0..=(last - first) / SPEED_STEP)
        .map(|k| first + k * SPEED_STEP)
        .filter(|&t| in_window(t, opts.day_window))
        .collect();
    let bin_index: HashMap<Minutes, usize> = bins.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let n = model.len();
    let mut raw = vec![vec![None; bins.len()]; n];
    let mut observed = vec![Vec::new(); n];
    for r in &feeds.speeds {
        let seg = model.require(&r.segment_id)?;
        let t = r.timestamp.div_euclid(SPEED_STEP) * SPEED_STEP;
        if !(r.speed_mph.is_finite() && r.speed_mph > 0.0) {
            continue;
        }
        if let Some(&k) = bin_index.get(&t) {
            raw[seg][k] = Some(r.speed_mph);
            observed[seg].push(r.speed_mph);
        }
    }
    let mut series = Vec::with_capacity(n);
    for (i, s) in raw.iter().enumerate() {
        series.push(impute_speed(s).map_err(|_| IngestError::SegmentWithoutData(model.segments()[i].to_string()))?);
    }

    let network = if opts.empirical_reference {
        let refs: Vec<f64> = observed
            .iter()
            .map(|o| reference_speed(o))
            .collect::<Result<_, _>>()?;
        model.clone().with_reference_speeds(&refs)?
    } else {
        model.clone()
    };
    let v_ref = network.reference_speeds();

    let weather_start = first.div_euclid(WEATHER_STEP) * WEATHER_STEP;
    let weather_end = last.div_euclid(WEATHER_STEP) * WEATHER_STEP;
    let weather = interpolate_weather(&hourly_slots(&feeds.weather, weather_start, weather_end), weather_start)?;

    let alerts = feeds.alert_events();
    let closures = feeds.closure_events();
    let mut alerts_by_bin: HashMap<Minutes, Vec<AlertEvent>> = HashMap::new();
    for a in alerts {
        model.require(&a.segment_id)?;
        alerts_by_bin
            .entry(a.timestamp.div_euclid(SPEED_STEP) * SPEED_STEP)
            .or_default()
            .push(a);
    }
    for c in &closures {
        for id in &c.segment_ids {
            model.require(id)?;
        }
    }

    let mut frames = Vec::with_capacity(bins.len());
    for (k, &t) in bins.iter().enumerate() {
        let speeds: Vec<f64> = series.iter().map(|s| s[k]).collect();
        let w = &weather[((t - weather_start) / WEATHER_STEP) as usize];
        let active: Vec<ClosureEvent> = closures.iter().filter(|c| c.active_at(t)).cloned().collect();
        let status = fuse_incidents(
            alerts_by_bin.get(&t).map(Vec::as_slice).unwrap_or(&[]),
            &active,
            t,
            &network,
        )?;
        frames.push(assemble(&network, t, speeds, &v_ref, status.status, w, &opts.calendar)?);
    }
    Ok(IngestOutput { network, frames })
}

fn assemble(
    network: &NetworkModel,
    t: Minutes,
    speeds: Vec<f64>,
    v_ref: &[f64],
    incident_status: Vec<IncidentStatus>,
    weather: &WeatherRecord,
    calendar: &Calendar,
) -> Result<RawFrame, IngestError> {
    let tti = speeds
        .iter()
        .zip(v_ref)
        .map(|(&v, &r)| tti(v, r))
        .collect::<Result<Vec<_>, _>>()?;
    let slowdown = (0..network.len()).map(|i| slowdown_at(&speeds, network, i)).collect();
    Ok(RawFrame {
        timestamp: t,
        speeds,
        tti,
        slowdown,
        incident_status,
        weather: weather.features(),
        time_features: calendar.time_features(t),
    })
}

/// Incremental, strictly causal frame construction used during replay.
///
/// Missing speeds carry the last observation forward, falling back to the
/// reference speed before a segment's first report. Weather holds the latest
/// record at or before the bin.
#[derive(Clone, Debug)]
pub struct LiveFrameBuilder {
    network: NetworkModel,
    calendar: Calendar,
    last_speed: Vec<Option<f64>>,
    last_weather: Option<WeatherRecord>,
}

impl LiveFrameBuilder {
    pub fn new(network: NetworkModel, calendar: Calendar) -> Self {
        let n = network.len();
        Self {
            network,
            calendar,
            last_speed: vec![None; n],
            last_weather: None,
        }
    }

    pub fn network(&self) -> &NetworkModel {
        &self.network
    }

    /// Builds the frame for bin `t` from records that became available in
    /// `(previous bin, t]`, plus closures active at `t`.
    pub fn push(
        &mut self,
        t: Minutes,
        speeds: &[SpeedRecord],
        alerts: &[AlertEvent],
        active_closures: &[ClosureEvent],
        weather: &[WeatherRecord],
    ) -> Result<RawFrame, IngestError> {
        for r in speeds {
            let seg = self.network.require(&r.segment_id)?;
            if r.speed_mph.is_finite() && r.speed_mph > 0.0 {
                self.last_speed[seg] = Some(r.speed_mph);
            }
        }
        for w in weather {
            if self.last_weather.as_ref().is_none_or(|l| l.timestamp <= w.timestamp) {
                self.last_weather = Some(w.clone());
            }
        }
        let v_ref = self.network.reference_speeds();
        let values: Vec<f64> = self
            .last_speed
            .iter()
            .zip(&v_ref)
            .map(|(s, &r)| s.unwrap_or(r))
            .collect();
        let weather = self
            .last_weather
            .clone()
            .ok_or(IngestError::NoWeather)?;
        let status = fuse_incidents(alerts, active_closures, t, &self.network)?;
        assemble(&self.network, t, values, &v_ref, status.status, &weather, &self.calendar)
    }
}

pub const FRAMES_FILE: &str = "frames.jsonl";

pub fn write_frames(path: &Path, frames: &[RawFrame]) -> Result<(), IngestError> {
    write_jsonl(path, frames)
}

pub fn read_frames(path: &Path) -> Result<Vec<RawFrame>, IngestError> {
    read_jsonl(path)
}
