//! On-disk feed formats.
//!
//! Every file starts with a version line: `# format_version=1` for the
//! delimited feeds and `{"format_version":1}` for line-delimited JSON.
//!
//! | file              | record                                                    |
//! |-------------------|-----------------------------------------------------------|
//! | `speeds.csv`      | `segment_id,timestamp,speed_mph[,confidence_score,confidence_value]` |
//! | `alerts.jsonl`    | `{timestamp, segment_id, category[, reliability]}`        |
//! | `closures.jsonl`  | `{open_timestamp, close_timestamp, segment_ids, closure_type}` |
//! | `weather.csv`     | `timestamp,temperature,humidity,wind_speed,pressure,visibility,precip_hourly,pavement_wet` |
//! | `engagements.jsonl` | [`EngagementRecord`]                                    |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{EngagementRecord, Minutes, SegmentId, WeatherRecord};

use super::incidents::{AlertEvent, ClosureEvent};
use super::IngestError;

pub const FEED_FORMAT_VERSION: u32 = 1;

pub const SPEEDS_FILE: &str = "speeds.csv";
pub const ALERTS_FILE: &str = "alerts.jsonl";
pub const CLOSURES_FILE: &str = "closures.jsonl";
pub const WEATHER_FILE: &str = "weather.csv";
pub const ENGAGEMENTS_FILE: &str = "engagements.jsonl";

/// Closures lasting longer than this are discarded.
pub const MAX_CLOSURE_MINUTES: Minutes = 24 * 60;

/// Alert categories kept at the feed boundary.
pub const ALERT_CATEGORIES: [&str; 2] = ["accident", "jam"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedRecord {
    pub segment_id: SegmentId,
    pub timestamp: Minutes,
    pub speed_mph: f64,
    #[serde(default)]
    pub confidence_score: Option<f64>,
    #[serde(default)]
    pub confidence_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub timestamp: Minutes,
    pub segment_id: SegmentId,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureRecord {
    pub open_timestamp: Minutes,
    pub close_timestamp: Minutes,
    pub segment_ids: Vec<SegmentId>,
    pub closure_type: String,
}

#[derive(Serialize, Deserialize)]
struct WeatherRow {
    timestamp: Minutes,
    temperature: f64,
    humidity: f64,
    wind_speed: f64,
    pressure: f64,
    visibility: f64,
    precip_hourly: f64,
    pavement_wet: u8,
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    format_version: u32,
}

/// All raw inputs of one feed directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Feeds {
    pub speeds: Vec<SpeedRecord>,
    pub alerts: Vec<AlertRecord>,
    pub closures: Vec<ClosureRecord>,
    pub weather: Vec<WeatherRecord>,
}

impl Feeds {
    pub fn read_dir(dir: &Path) -> Result<Self, IngestError> {
        Ok(Self {
            speeds: read_csv(&dir.join(SPEEDS_FILE))?,
            alerts: read_jsonl(&dir.join(ALERTS_FILE))?,
            closures: read_jsonl(&dir.join(CLOSURES_FILE))?,
            weather: read_csv::<WeatherRow>(&dir.join(WEATHER_FILE))?
                .into_iter()
                .map(|w| WeatherRecord {
                    timestamp: w.timestamp,
                    temperature: w.temperature,
                    humidity: w.humidity,
                    wind_speed: w.wind_speed,
                    pressure: w.pressure,
                    visibility: w.visibility,
                    precip_hourly: w.precip_hourly,
                    pavement_wet: w.pavement_wet != 0,
                })
                .collect(),
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), IngestError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_csv(&dir.join(SPEEDS_FILE), &self.speeds)?;
        write_jsonl(&dir.join(ALERTS_FILE), &self.alerts)?;
        write_jsonl(&dir.join(CLOSURES_FILE), &self.closures)?;
        let rows: Vec<WeatherRow> = self
            .weather
            .iter()
            .map(|w| WeatherRow {
                timestamp: w.timestamp,
                temperature: w.temperature,
                humidity: w.humidity,
                wind_speed: w.wind_speed,
                pressure: w.pressure,
                visibility: w.visibility,
                precip_hourly: w.precip_hourly,
                pavement_wet: u8::from(w.pavement_wet),
            })
            .collect();
        write_csv(&dir.join(WEATHER_FILE), &rows)
    }

    /// Alerts in the accepted categories, converted to fusion events.
    /// Reliability scores are not screened.
    pub fn alert_events(&self) -> Vec<AlertEvent> {
        self.alerts
            .iter()
            .filter(|a| {
                ALERT_CATEGORIES
                    .iter()
                    .any(|c| a.category.eq_ignore_ascii_case(c))
            })
            .map(|a| AlertEvent {
                timestamp: a.timestamp,
                segment_id: a.segment_id.clone(),
            })
            .collect()
    }

    /// Closures with a location and a duration of at most 24 hours.
    pub fn closure_events(&self) -> Vec<ClosureEvent> {
        self.closures
            .iter()
            .filter(|c| {
                !c.segment_ids.is_empty()
                    && c.close_timestamp > c.open_timestamp
                    && c.close_timestamp - c.open_timestamp <= MAX_CLOSURE_MINUTES
            })
            .map(|c| ClosureEvent {
                open_timestamp: c.open_timestamp,
                close_timestamp: c.close_timestamp,
                segment_ids: c.segment_ids.clone(),
            })
            .collect()
    }

    /// Earliest accepted alert on any of `segments` within `[from, to]`.
    pub fn first_alert(&self, segments: &[SegmentId], from: Minutes, to: Minutes) -> Option<Minutes> {
        self.alert_events()
            .iter()
            .filter(|a| a.timestamp >= from && a.timestamp <= to && segments.contains(&a.segment_id))
            .map(|a| a.timestamp)
            .min()
    }

    /// Feeds restricted to records observable at `now`.
    pub fn up_to(&self, now: Minutes) -> Feeds {
        Feeds {
            speeds: self.speeds.iter().filter(|r| r.timestamp <= now).cloned().collect(),
            alerts: self.alerts.iter().filter(|r| r.timestamp <= now).cloned().collect(),
            closures: self
                .closures
                .iter()
                .filter(|r| r.open_timestamp <= now)
                .cloned()
                .collect(),
            weather: self.weather.iter().filter(|r| r.timestamp <= now).cloned().collect(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn parse_version_comment(path: &Path, line: &str) -> Result<(), IngestError> {
    let found = line
        .trim()
        .strip_prefix('#')
        .and_then(|s| s.trim().strip_prefix("format_version="))
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| IngestError::MissingHeader(path.display().to_string()))?;
    if found != FEED_FORMAT_VERSION {
        return Err(IngestError::FormatVersion {
            path: path.to_path_buf(),
            found,
        });
    }
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| io_err(path, e))?;
    parse_version_comment(path, &first)?;
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize()
        .map(|r| {
            r.map_err(|source| IngestError::Csv {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# format_version={FEED_FORMAT_VERSION}").map_err(|e| io_err(path, e))?;
    let mut csv = csv::Writer::from_writer(out);
    for r in rows {
        csv.serialize(r).map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    csv.flush().map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| io_err(path, e))?
        .ok_or_else(|| IngestError::MissingHeader(path.display().to_string()))?;
    let header: JsonHeader = serde_json::from_str(&header)
        .map_err(|_| IngestError::MissingHeader(path.display().to_string()))?;
    if header.format_version != FEED_FORMAT_VERSION {
        return Err(IngestError::FormatVersion {
            path: path.to_path_buf(),
            found: header.format_version,
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IngestError::Json {
            path: path.to_path_buf(),
            line: n + 2,
            source,
        })?);
    }
    Ok(out)
}

pub fn jsonl_header() -> String {
    serde_json::to_string(&JsonHeader {
        format_version: FEED_FORMAT_VERSION,
    })
    .expect("serializable")
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", jsonl_header()).map_err(|e| io_err(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("serializable");
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_engagements(path: &Path) -> Result<Vec<EngagementRecord>, IngestError> {
    let records: Vec<EngagementRecord> = read_jsonl(path)?;
    EngagementRecord::check_order(&records)?;
    Ok(records)
}

pub fn write_engagements(path: &Path, records: &[EngagementRecord]) -> Result<(), IngestError> {
    EngagementRecord::check_order(records)?;
    write_jsonl(path, records)
}
