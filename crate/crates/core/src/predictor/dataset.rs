//! Encoder inputs, sliding windows and the train/validation/test split.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Minutes, NetworkModel, SPEED_STEP};
use crate::ingest::calendar::date_of;
use crate::ingest::{FeatureFrame, FrameScaler, RawFrame, TIME_FEATURE_WIDTH};
use crate::numerics::Tensor;

use super::PredictorError;

/// How per-segment incident embeddings enter the encoder input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentAggregation {
    /// Concatenate embeddings of targets and their neighbours, sum the rest.
    #[default]
    Hybrid,
    /// Concatenate every segment's embedding.
    Concatenate,
    /// Sum every segment's embedding.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureToggles {
    pub slowdown: bool,
    pub incidents: bool,
    pub weather: bool,
    pub time: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self {
            slowdown: true,
            incidents: true,
            weather: true,
            time: true,
        }
    }
}

/// Column layout of one encoder step.
///
/// Continuous part: scaled speeds of all segments, then scaled slowdowns,
/// weather and time features (each optional). Incident part: embeddings of
/// `concat_segments` side by side, then the summed embedding of
/// `summed_segments`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub n_segments: usize,
    pub targets: Vec<usize>,
    pub concat_segments: Vec<usize>,
    pub summed_segments: Vec<usize>,
    pub toggles: FeatureToggles,
}

impl InputLayout {
    pub fn new(network: &NetworkModel, aggregation: IncidentAggregation, toggles: FeatureToggles) -> Self {
        let n = network.len();
        let concat: BTreeSet<usize> = match aggregation {
            IncidentAggregation::Concatenate => (0..n).collect(),
            IncidentAggregation::Sum => BTreeSet::new(),
            IncidentAggregation::Hybrid => network
                .targets()
                .iter()
                .flat_map(|&t| std::iter::once(t).chain(network.undirected_neighbors(t).iter().copied()))
                .collect(),
        };
        let (concat_segments, summed_segments) = if toggles.incidents {
            (concat.iter().copied().collect(), (0..n).filter(|i| !concat.contains(i)).collect())
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            n_segments: n,
            targets: network.targets().to_vec(),
            concat_segments,
            summed_segments,
            toggles,
        }
    }

    pub fn continuous_width(&self) -> usize {
        let t = &self.toggles;
        self.n_segments
            + if t.slowdown { self.n_segments } else { 0 }
            + if t.weather { 7 } else { 0 }
            + if t.time { TIME_FEATURE_WIDTH } else { 0 }
    }

    /// Number of incident embedding slots (concatenated plus one summed).
    pub fn embedding_slots(&self) -> usize {
        self.concat_segments.len() + usize::from(!self.summed_segments.is_empty())
    }

    pub fn input_width(&self, embed_dim: usize) -> usize {
        self.continuous_width() + self.embedding_slots() * embed_dim
    }

    pub fn encode(&self, f: &FeatureFrame) -> EncodedFrame {
        let mut continuous = Vec::with_capacity(self.continuous_width());
        continuous.extend_from_slice(&f.speeds_scaled);
        if self.toggles.slowdown {
            continuous.extend_from_slice(&f.slowdown_scaled);
        }
        if self.toggles.weather {
            continuous.extend_from_slice(&f.weather_scaled);
        }
        if self.toggles.time {
            continuous.extend_from_slice(&f.time_features);
        }
        let status = |i: usize| f.incident_status[i].code() as usize;
        let mut counts = [0.0; 3];
        for &i in &self.summed_segments {
            counts[status(i)] += 1.0;
        }
        EncodedFrame {
            continuous,
            concat_status: self.concat_segments.iter().map(|&i| status(i)).collect(),
            counts,
        }
    }
}

/// One frame in model-input form.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFrame {
    pub continuous: Vec<f64>,
    /// Status code per concatenated segment.
    pub concat_status: Vec<usize>,
    /// Status histogram over summed segments.
    pub counts: [f64; 3],
}

impl EncodedFrame {
    /// Flat numeric vector with incident statuses one-hot encoded, used by
    /// the linear baseline.
    pub fn linear_features(&self) -> Vec<f64> {
        let mut out = self.continuous.clone();
        for &s in &self.concat_status {
            let mut one_hot = [0.0; 3];
            one_hot[s] = 1.0;
            out.extend_from_slice(&one_hot);
        }
        out.extend_from_slice(&self.counts);
        out
    }
}

/// One encoder step for a batch.
#[derive(Clone, Debug)]
pub struct BatchStep {
    pub continuous: Tensor,
    /// `rows * concat_segments` status codes.
    pub concat_status: Vec<usize>,
    pub counts: Tensor,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub steps: Vec<BatchStep>,
    /// Scaled target speeds at the base time.
    pub y0: Tensor,
    /// Scaled target speeds at each horizon.
    pub targets: Vec<Tensor>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.y0.rows()
    }

    /// Targets side by side, `rows × (horizon * targets)`.
    pub fn target_matrix(&self) -> Tensor {
        let rows = self.rows();
        let mut data = Vec::new();
        for r in 0..rows {
            for t in &self.targets {
                data.extend_from_slice(t.row(r));
            }
        }
        let cols = self.targets.iter().map(Tensor::cols).sum();
        Tensor::new(rows, cols, data).expect("consistent target widths")
    }
}

/// Time-ordered frames plus the base indices of every complete window.
#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub layout: InputLayout,
    pub lookback: usize,
    pub horizon: usize,
    pub timestamps: Vec<Minutes>,
    pub encoded: Vec<EncodedFrame>,
    /// Scaled target speeds per frame.
    pub target_scaled: Vec<Vec<f64>>,
    /// Target speeds in mph per frame.
    pub target_mph: Vec<Vec<f64>>,
    /// Frame index of the last encoder step of each window.
    pub samples: Vec<usize>,
}

impl SequenceDataset {
    pub fn build(
        frames: &[RawFrame],
        scaler: &FrameScaler,
        layout: InputLayout,
        lookback: usize,
        horizon: usize,
    ) -> Result<Self, PredictorError> {
        if lookback == 0 || horizon == 0 {
            return Err(PredictorError::Config("lookback and horizon must be positive".into()));
        }
        for w in frames.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(PredictorError::Unordered(w[1].timestamp));
            }
        }
        let mut encoded = Vec::with_capacity(frames.len());
        let mut target_scaled = Vec::with_capacity(frames.len());
        let mut target_mph = Vec::with_capacity(frames.len());
        for f in frames {
            let ff = scaler.apply(f);
            encoded.push(layout.encode(&ff));
            target_scaled.push(layout.targets.iter().map(|&i| ff.speeds_scaled[i]).collect());
            target_mph.push(layout.targets.iter().map(|&i| f.speeds[i]).collect());
        }
        let timestamps: Vec<Minutes> = frames.iter().map(|f| f.timestamp).collect();
        let span = lookback - 1 + horizon;
        let samples = (lookback - 1..frames.len().saturating_sub(horizon))
            .filter(|&k| {
                let first = k + 1 - lookback;
                timestamps[k + horizon] - timestamps[first] == span as Minutes * SPEED_STEP
            })
            .collect();
        Ok(Self {
            layout,
            lookback,
            horizon,
            timestamps,
            encoded,
            target_scaled,
            target_mph,
            samples,
        })
    }

    pub fn base_time(&self, k: usize) -> Minutes {
        self.timestamps[k]
    }

    /// Batch over window base indices `ks` (frame indices, not sample ordinals).
    pub fn batch(&self, ks: &[usize]) -> Batch {
        let rows = ks.len();
        let wc = self.layout.continuous_width();
        let mut steps = Vec::with_capacity(self.lookback);
        for j in 0..self.lookback {
            let mut cont = Vec::with_capacity(rows * wc);
            let mut status = Vec::new();
            let mut counts = Vec::with_capacity(rows * 3);
            for &k in ks {
                let e = &self.encoded[k + 1 + j - self.lookback];
                cont.extend_from_slice(&e.continuous);
                status.extend_from_slice(&e.concat_status);
                counts.extend_from_slice(&e.counts);
            }
            steps.push(BatchStep {
                continuous: Tensor::new(rows, wc, cont).expect("continuous width"),
                concat_status: status,
                counts: Tensor::new(rows, 3, counts).expect("three statuses"),
            });
        }
        let gather = |offset: usize| {
            let rows_data: Vec<Vec<f64>> = ks.iter().map(|&k| self.target_scaled[k + offset].clone()).collect();
            Tensor::new(rows, self.layout.targets.len(), rows_data.concat()).expect("target width")
        };
        Batch {
            steps,
            y0: gather(0),
            targets: (1..=self.horizon).map(gather).collect(),
        }
    }

    /// Flattened lagged features `[X_{t-lags+1}, …, X_t]` for the linear baseline.
    pub fn lagged_features(&self, k: usize, lags: usize) -> Vec<f64> {
        (0..lags)
            .flat_map(|j| self.encoded[k + 1 + j - lags].linear_features())
            .collect()
    }
}

/// Single-row batch from the last `window.len()` frames, without targets,
/// for live forecasting.
pub fn inference_batch(window: &[RawFrame], scaler: &FrameScaler, layout: &InputLayout) -> Batch {
    let mut steps = Vec::with_capacity(window.len());
    let mut y0 = Vec::new();
    for f in window {
        let ff = scaler.apply(f);
        let e = layout.encode(&ff);
        y0 = layout.targets.iter().map(|&i| ff.speeds_scaled[i]).collect();
        steps.push(BatchStep {
            continuous: Tensor::row_vector(e.continuous),
            concat_status: e.concat_status,
            counts: Tensor::row_vector(e.counts.to_vec()),
        });
    }
    Batch {
        steps,
        y0: Tensor::row_vector(y0),
        targets: Vec::new(),
    }
}

/// Sample base indices assigned to each role.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Temporal-blocked random split. Samples whose base date is in
/// `excluded_days` are dropped. The remaining samples are cut into blocks of
/// `block_len` consecutive windows; a seeded shuffle of blocks sends
/// `train_fraction` of them to training. The last `validation_fraction` of
/// the training samples by time become the validation slice.
pub fn temporal_block_split(
    data: &SequenceDataset,
    excluded_days: &BTreeSet<NaiveDate>,
    block_len: usize,
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Split {
    let kept: Vec<usize> = data
        .samples
        .iter()
        .copied()
        .filter(|&k| !excluded_days.contains(&date_of(data.base_time(k))))
        .collect();
    let mut blocks: Vec<&[usize]> = kept.chunks(block_len.max(1)).collect();
    blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (blocks.len() as f64 * train_fraction).round() as usize;
    let mut train: Vec<usize> = blocks[..n_train].concat();
    let mut test: Vec<usize> = blocks[n_train..].concat();
    train.sort_unstable();
    test.sort_unstable();
    let n_val = (train.len() as f64 * validation_fraction).round() as usize;
    let validation = train.split_off(train.len() - n_val);
    Split { train, validation, test }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::{Edge, IncidentStatus, NetworkDefinition, Role, SegmentDefinition, WeatherRecord};
    use crate::ingest::Calendar;

    pub(crate) fn chain_network(n: usize, targets: &[usize]) -> NetworkModel {
        let names: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
        NetworkModel::from_definition(NetworkDefinition {
            format_version: 1,
            segments: names
                .iter()
                .map(|s| SegmentDefinition {
                    id: s.as_str().into(),
                    role: Role::Freeway,
                    reference_speed: 60.0,
                    display: None,
                })
                .collect(),
            upstream_edges: names
                .windows(2)
                .map(|w| Edge {
                    from: w[0].as_str().into(),
                    to: w[1].as_str().into(),
                })
                .collect(),
            targets: targets.iter().map(|&i| names[i].as_str().into()).collect(),
        })
        .unwrap()
    }

    /// Synthetic frames with a smooth periodic speed pattern.
    pub(crate) fn synthetic_frames(n: usize, len: usize, start: Minutes) -> Vec<RawFrame> {
        let cal = Calendar::default();
        let w = WeatherRecord::from_continuous(0, [50.0, 40.0, 3.0, 29.9, 10.0, 0.0], false);
        (0..len)
            .map(|k| {
                let t = start + k as Minutes * SPEED_STEP;
                let speeds: Vec<f64> = (0..n)
                    .map(|i| 50.0 + 8.0 * ((k as f64 + 2.0 * i as f64) / 6.0).sin())
                    .collect();
                RawFrame {
                    timestamp: t,
                    tti: speeds.iter().map(|v| (60.0 / v).max(1.0)).collect(),
                    slowdown: vec![0.0; n],
                    incident_status: (0..n)
                        .map(|i| if (k + i) % 17 == 0 { IncidentStatus::Alert } else { IncidentStatus::Normal })
                        .collect(),
                    weather: w.features(),
                    time_features: cal.time_features(t),
                    speeds,
                }
            })
            .collect()
    }

    #[test]
    fn hybrid_layout_concatenates_target_neighbourhood() {
        let net = chain_network(6, &[2]);
        let l = InputLayout::new(&net, IncidentAggregation::Hybrid, FeatureToggles::default());
        assert_eq!(l.concat_segments, vec![1, 2, 3]);
        assert_eq!(l.summed_segments, vec![0, 4, 5]);
        assert_eq!(l.embedding_slots(), 4);
        assert_eq!(l.input_width(3), 6 + 6 + 7 + 11 + 12);
        let s = InputLayout::new(&net, IncidentAggregation::Sum, FeatureToggles::default());
        assert_eq!(s.embedding_slots(), 1);
    }

    #[test]
    fn windows_skip_gaps() {
        let net = chain_network(3, &[0, 2]);
        let mut frames = synthetic_frames(3, 20, 0);
        // A one-day gap after frame 9.
        for f in frames.iter_mut().skip(10) {
            f.timestamp += 1440;
        }
        let scaler = FrameScaler::fit(frames.iter()).unwrap();
        let layout = InputLayout::new(&net, IncidentAggregation::Hybrid, FeatureToggles::default());
        let ds = SequenceDataset::build(&frames, &scaler, layout, 3, 2).unwrap();
        // Valid bases: 2..=7 in the first run and 12..=17 in the second.
        assert_eq!(ds.samples, vec![2, 3, 4, 5, 6, 7, 12, 13, 14, 15, 16, 17]);
        let b = ds.batch(&[2, 12]);
        assert_eq!(b.steps.len(), 3);
        assert_eq!(b.y0.shape(), (2, 2));
        assert_eq!(b.targets.len(), 2);
        assert_eq!(b.targets[1].row(0), ds.target_scaled[4].as_slice());
        assert_eq!(b.steps[0].continuous.row(1), ds.encoded[10].continuous.as_slice());
        assert_eq!(b.target_matrix().shape(), (2, 4));
    }

    #[test]
    fn split_is_disjoint_and_excludes_days() {
        let net = chain_network(2, &[1]);
        let frames = synthetic_frames(2, 288 * 3, 0);
        let scaler = FrameScaler::fit(frames.iter()).unwrap();
        let layout = InputLayout::new(&net, IncidentAggregation::Hybrid, FeatureToggles::default());
        let ds = SequenceDataset::build(&frames, &scaler, layout, 12, 6).unwrap();
        let excluded: BTreeSet<NaiveDate> = [date_of(1440)].into_iter().collect();
        let s = temporal_block_split(&ds, &excluded, 12, 0.8, 0.1, 4);
        let all: BTreeSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all.len(), s.train.len() + s.validation.len() + s.test.len());
        assert!(all.iter().all(|&k| date_of(ds.base_time(k)) != date_of(1440)));
        assert!(s.train.last().unwrap() < s.validation.first().unwrap());
        let frac = (s.train.len() + s.validation.len()) as f64 / all.len() as f64;
        assert!((frac - 0.8).abs() < 0.05, "{frac}");
        assert_eq!(s, temporal_block_split(&ds, &excluded, 12, 0.8, 0.1, 4));
    }

    #[test]
    fn inference_batch_matches_dataset_batch() {
        let net = chain_network(3, &[0, 2]);
        let frames = synthetic_frames(3, 30, 0);
        let scaler = FrameScaler::fit(frames.iter()).unwrap();
        let layout = InputLayout::new(&net, IncidentAggregation::Hybrid, FeatureToggles::default());
        let ds = SequenceDataset::build(&frames, &scaler, layout.clone(), 4, 6).unwrap();
        let k = ds.samples[5];
        let a = ds.batch(&[k]);
        let b = inference_batch(&frames[k - 3..=k], &scaler, &layout);
        assert_eq!(a.y0, b.y0);
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.continuous, y.continuous);
            assert_eq!(x.concat_status, y.concat_status);
            assert_eq!(x.counts, y.counts);
        }
    }
}
