//! Clocked, causal replay: feeds → frames → forecast → query → plan.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::associator::{step_transition, PlanKeyMatrix, PlanState, RankModel, Timeline, TrafficQuery};
use crate::domain::{Minutes, NetworkModel, PlanId, Role, WeatherRecord, SPEED_STEP};
use crate::ingest::{AlertEvent, Calendar, ClosureEvent, Feeds, FrameScaler, LiveFrameBuilder, RawFrame, SpeedRecord};
use crate::predictor::{latest_observation, Seq2Seq, HORIZON};

use super::ScenarioError;

/// Source of `[horizon][target]` speed forecasts from frames seen so far.
pub trait Forecaster: Send {
    fn forecast(&mut self, network: &NetworkModel, history: &[RawFrame]) -> Result<Vec<Vec<f64>>, ScenarioError>;
}

fn current_targets(network: &NetworkModel, frame: &RawFrame) -> Vec<f64> {
    network.targets().iter().map(|&i| frame.speeds[i]).collect()
}

/// Latest observation carried over every horizon.
#[derive(Clone, Copy, Debug, Default)]
pub struct PersistenceForecaster;

impl Forecaster for PersistenceForecaster {
    fn forecast(&mut self, network: &NetworkModel, history: &[RawFrame]) -> Result<Vec<Vec<f64>>, ScenarioError> {
        let last = history.last().expect("forecast after at least one frame");
        Ok(latest_observation(&current_targets(network, last), HORIZON))
    }
}

/// Trained sequence model; falls back to persistence until a full,
/// gap-free lookback window is available.
pub struct ModelForecaster {
    model: Seq2Seq,
    scaler: FrameScaler,
}

impl ModelForecaster {
    pub fn new(model: Seq2Seq, scaler: FrameScaler, fingerprint: &str, network: &NetworkModel) -> Result<Self, ScenarioError> {
        if fingerprint != network.fingerprint() {
            return Err(ScenarioError::NetworkMismatch {
                expected: fingerprint.to_owned(),
                found: network.fingerprint(),
            });
        }
        Ok(Self { model, scaler })
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }
}

impl Forecaster for ModelForecaster {
    fn forecast(&mut self, network: &NetworkModel, history: &[RawFrame]) -> Result<Vec<Vec<f64>>, ScenarioError> {
        let lookback = self.model.config.lookback;
        let n = history.len();
        let contiguous = n >= lookback
            && history[n - 1].timestamp - history[n - lookback].timestamp == (lookback as Minutes - 1) * SPEED_STEP;
        if !contiguous {
            return PersistenceForecaster.forecast(network, history);
        }
        Ok(self.model.forecast_frames(history, &self.scaler)?.values)
    }
}

/// Records released at one clock step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Arrivals {
    pub speeds: Vec<SpeedRecord>,
    /// Alerts that became visible since the previous step, stamped `now`.
    pub alerts: Vec<AlertEvent>,
    pub active_closures: Vec<ClosureEvent>,
    pub weather: Vec<WeatherRecord>,
}

/// Time-gated access to a feed set. Every released record is audited
/// against the clock.
#[derive(Clone, Debug)]
pub struct FeedView {
    speeds: Vec<SpeedRecord>,
    alerts: Vec<AlertEvent>,
    closures: Vec<ClosureEvent>,
    weather: Vec<WeatherRecord>,
    cursor: [usize; 4],
    opened: Vec<ClosureEvent>,
    now: Option<Minutes>,
    max_read: Option<Minutes>,
}

impl FeedView {
    pub fn new(feeds: &Feeds) -> Self {
        let mut speeds = feeds.speeds.clone();
        speeds.sort_by_key(|r| r.timestamp);
        let mut alerts = feeds.alert_events();
        alerts.sort_by_key(|a| a.timestamp);
        let mut closures = feeds.closure_events();
        closures.sort_by_key(|c| c.open_timestamp);
        let mut weather = feeds.weather.clone();
        weather.sort_by_key(|w| w.timestamp);
        Self {
            speeds,
            alerts,
            closures,
            weather,
            cursor: [0; 4],
            opened: Vec::new(),
            now: None,
            max_read: None,
        }
    }

    /// A view over `feeds` that treats everything stamped at or before `now`
    /// as already released. Used when a live feed directory is re-read.
    pub fn resume(feeds: &Feeds, now: Minutes) -> Self {
        let mut v = Self::new(feeds);
        v.cursor[0] = v.speeds.partition_point(|r| r.timestamp <= now);
        v.cursor[1] = v.alerts.partition_point(|a| a.timestamp <= now);
        v.cursor[2] = v.closures.partition_point(|c| c.open_timestamp <= now);
        v.cursor[3] = v.weather.partition_point(|w| w.timestamp <= now);
        v.opened = v.closures[..v.cursor[2]]
            .iter()
            .filter(|c| c.close_timestamp > now)
            .cloned()
            .collect();
        v.now = Some(now);
        v.max_read = Some(now);
        v
    }

    /// Latest timestamp of any record released so far.
    pub fn max_read(&self) -> Option<Minutes> {
        self.max_read
    }

    fn note(&mut self, t: Minutes, now: Minutes) -> Result<(), ScenarioError> {
        if t > now {
            return Err(ScenarioError::Lookahead { read: t, now });
        }
        self.max_read = Some(self.max_read.map_or(t, |m| m.max(t)));
        Ok(())
    }

    /// Releases everything stamped at or before `now` not yet released.
    pub fn advance(&mut self, now: Minutes) -> Result<Arrivals, ScenarioError> {
        if let Some(prev) = self.now {
            assert!(now > prev, "clock must move forward");
        }
        self.now = Some(now);
        let mut out = Arrivals::default();
        while let Some(r) = self.speeds.get(self.cursor[0]).filter(|r| r.timestamp <= now).cloned() {
            self.note(r.timestamp, now)?;
            out.speeds.push(r);
            self.cursor[0] += 1;
        }
        while let Some(a) = self.alerts.get(self.cursor[1]).filter(|a| a.timestamp <= now).cloned() {
            self.note(a.timestamp, now)?;
            out.alerts.push(AlertEvent {
                timestamp: now,
                segment_id: a.segment_id,
            });
            self.cursor[1] += 1;
        }
        while let Some(c) = self.closures.get(self.cursor[2]).filter(|c| c.open_timestamp <= now).cloned() {
            self.note(c.open_timestamp, now)?;
            self.opened.push(c);
            self.cursor[2] += 1;
        }
        self.opened.retain(|c| c.close_timestamp > now);
        out.active_closures = self.opened.clone();
        while let Some(w) = self.weather.get(self.cursor[3]).filter(|w| w.timestamp <= now).cloned() {
            self.note(w.timestamp, now)?;
            out.weather.push(w);
            self.cursor[3] += 1;
        }
        Ok(out)
    }
}

/// One clock step of the query pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryStep {
    pub timestamp: Minutes,
    pub frame: RawFrame,
    pub forecast: Vec<Vec<f64>>,
    pub query: TrafficQuery,
}

const HISTORY_KEEP: usize = 64;

/// Turns released feed records into frames, forecasts and TTI queries.
pub struct QueryBuilder {
    builder: LiveFrameBuilder,
    view: FeedView,
    forecaster: Box<dyn Forecaster>,
    history: Vec<RawFrame>,
}

impl QueryBuilder {
    pub fn new(network: NetworkModel, calendar: Calendar, feeds: &Feeds, forecaster: Box<dyn Forecaster>) -> Self {
        Self {
            builder: LiveFrameBuilder::new(network, calendar),
            view: FeedView::new(feeds),
            forecaster,
            history: Vec::new(),
        }
    }

    pub fn network(&self) -> &NetworkModel {
        self.builder.network()
    }

    pub fn view(&self) -> &FeedView {
        &self.view
    }

    /// Swaps in a re-read feed set; records at or before the last step are
    /// not released again.
    pub fn refresh(&mut self, feeds: &Feeds) {
        self.view = match self.history.last() {
            Some(f) => FeedView::resume(feeds, f.timestamp),
            None => FeedView::new(feeds),
        };
    }

    pub fn set_forecaster(&mut self, forecaster: Box<dyn Forecaster>) {
        self.forecaster = forecaster;
    }

    pub fn step(&mut self, now: Minutes) -> Result<QueryStep, ScenarioError> {
        let a = self.view.advance(now)?;
        let frame = self
            .builder
            .push(now, &a.speeds, &a.alerts, &a.active_closures, &a.weather)?;
        self.history.push(frame.clone());
        if self.history.len() > HISTORY_KEEP {
            self.history.drain(..self.history.len() - HISTORY_KEEP);
        }
        let network = self.builder.network();
        let forecast = self.forecaster.forecast(network, &self.history)?;
        let query = TrafficQuery::from_forecast(network, now, &frame.tti, &forecast)?;
        Ok(QueryStep {
            timestamp: now,
            frame,
            forecast,
            query,
        })
    }

    /// Steps every bin of `[start, end]`.
    pub fn run(&mut self, start: Minutes, end: Minutes) -> Result<Vec<QueryStep>, ScenarioError> {
        let mut out = Vec::new();
        let mut t = start;
        while t <= end {
            out.push(self.step(t)?);
            t += SPEED_STEP;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub plan_id: PlanId,
    pub score: f64,
}

/// One entry of the recommendation stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationEvent {
    pub timestamp: Minutes,
    pub scores: Vec<PlanScore>,
    pub active_plan: PlanId,
    pub candidate_plan: PlanId,
    pub dwell_blocked: bool,
    /// True when `active_plan` changed at this step.
    pub changed: bool,
    /// Highest current TTI per segment role.
    pub query_summary: BTreeMap<String, f64>,
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Freeway => "freeway",
        Role::Arterial => "arterial",
        Role::Ramp => "ramp",
    }
}

/// Scores plans and applies the dwell rule.
#[derive(Clone, Debug)]
pub struct Recommender {
    keys: PlanKeyMatrix,
    rank: RankModel,
    roles: Vec<Role>,
    state: PlanState,
}

impl Recommender {
    pub fn new(keys: PlanKeyMatrix, rank: RankModel, network: &NetworkModel, dwell: Minutes) -> Self {
        Self {
            keys,
            rank,
            roles: (0..network.len()).map(|i| network.role(i)).collect(),
            state: PlanState::new(dwell),
        }
    }

    pub fn state(&self) -> &PlanState {
        &self.state
    }

    pub fn keys(&self) -> &PlanKeyMatrix {
        &self.keys
    }

    /// Replaces the ranking weights; the plan state carries over.
    pub fn set_rank(&mut self, rank: RankModel) {
        self.rank = rank;
    }

    /// Operator override: the plan becomes active and restarts the dwell.
    pub fn force(&mut self, plan: &PlanId, now: Minutes) -> Result<(), ScenarioError> {
        self.keys.require(plan)?;
        if &self.state.active_plan != plan {
            self.state.active_plan = plan.clone();
            self.state.last_change = Some(now);
        }
        Ok(())
    }

    pub fn step(&mut self, q: &QueryStep) -> Result<RecommendationEvent, ScenarioError> {
        let scores = self.rank.score_plans(&q.query, &self.keys)?;
        let out = step_transition(&self.state, &scores, &self.keys, q.timestamp);
        self.state = out.state;
        let mut summary = BTreeMap::new();
        for (role, &v) in self.roles.iter().zip(&q.frame.tti) {
            let e = summary.entry(role_name(*role).to_owned()).or_insert(1.0f64);
            *e = e.max(v);
        }
        Ok(RecommendationEvent {
            timestamp: q.timestamp,
            scores: self
                .keys
                .plans()
                .iter()
                .zip(scores)
                .map(|(p, score)| PlanScore {
                    plan_id: p.clone(),
                    score,
                })
                .collect(),
            active_plan: self.state.active_plan.clone(),
            candidate_plan: out.candidate,
            dwell_blocked: out.dwell_blocked,
            changed: out.event.is_some(),
            query_summary: summary,
        })
    }

    pub fn run(&mut self, steps: &[QueryStep]) -> Result<Vec<RecommendationEvent>, ScenarioError> {
        steps.iter().map(|q| self.step(q)).collect()
    }
}

/// Active plan per step.
pub fn timeline(events: &[RecommendationEvent]) -> Timeline {
    events.iter().map(|e| (e.timestamp, e.active_plan.clone())).collect()
}

/// Query pipeline and recommender driven by one clock.
pub struct ReplaySession {
    pub queries: QueryBuilder,
    pub recommender: Recommender,
    next: Minutes,
    end: Minutes,
}

impl ReplaySession {
    pub fn new(queries: QueryBuilder, recommender: Recommender, start: Minutes, end: Minutes) -> Self {
        Self {
            queries,
            recommender,
            next: start,
            end,
        }
    }

    pub fn now(&self) -> Minutes {
        self.next
    }

    pub fn finished(&self) -> bool {
        self.next > self.end
    }

    /// Advances one step; `None` once the end is passed.
    pub fn step(&mut self) -> Result<Option<(QueryStep, RecommendationEvent)>, ScenarioError> {
        if self.finished() {
            return Ok(None);
        }
        let q = self.queries.step(self.next)?;
        let e = self.recommender.step(&q)?;
        self.next += SPEED_STEP;
        Ok(Some((q, e)))
    }

    pub fn run(&mut self) -> Result<Vec<RecommendationEvent>, ScenarioError> {
        let mut out = Vec::new();
        while let Some((_, e)) = self.step()? {
            out.push(e);
        }
        Ok(out)
    }
}
