//! Encoder-decoder GRU with bilinear attention.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Minutes;
use crate::ingest::{FrameScaler, RawFrame};
use crate::numerics::{
    load_checkpoint, save_checkpoint, GruStack, NumericsError, ParamId, ParamStore, Tape, Tensor, Var,
};

use super::dataset::{inference_batch, Batch, IncidentAggregation, InputLayout};
use super::PredictorError;

/// Floor applied to unscaled forecasts so downstream ratios stay defined.
pub const MIN_FORECAST_MPH: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub embed_dim: usize,
    /// Width of the hidden layer of the output head.
    pub attention_hidden: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub attention: bool,
    pub incident_aggregation: IncidentAggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 2,
            dropout: 0.2,
            embed_dim: 3,
            attention_hidden: 256,
            lookback: 12,
            horizon: 6,
            attention: true,
            incident_aggregation: IncidentAggregation::Hybrid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Sequence-to-sequence speed forecaster.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub layout: InputLayout,
    pub store: ParamStore,
    encoder: GruStack,
    decoder: GruStack,
    embed: Option<ParamId>,
    attn: Option<ParamId>,
    head: Head,
}

/// Decoder outputs plus the inputs it actually consumed.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// Scaled predictions per horizon, each `rows × targets`.
    pub predictions: Vec<Var>,
    /// Input fed at each decoder step; entry 0 is the current speed.
    pub inputs: Vec<Var>,
    /// Whether the input of step `k + 1` was the ground truth.
    pub forced: Vec<bool>,
    /// Attention weights per step, `rows × lookback`.
    pub attention: Vec<Var>,
}

/// Bilinear attention: `s_j = h · W · e_j`, softmax over `j`, context
/// `Σ a_j e_j`. Returns `(context, weights)`.
pub fn attend(tape: &mut Tape, h_dec: Var, encoder_states: &[Var], w: Var) -> Result<(Var, Var), PredictorError> {
    if encoder_states.is_empty() {
        return Err(PredictorError::EmptyEncoder);
    }
    let q = tape.matmul(h_dec, w)?;
    let scores: Vec<Var> = encoder_states
        .iter()
        .map(|&e| tape.row_dot(q, e))
        .collect::<Result<_, _>>()?;
    let s = tape.concat_cols(&scores)?;
    let a = tape.softmax_rows(s)?;
    let mut ctx = None;
    for (j, &e) in encoder_states.iter().enumerate() {
        let aj = tape.slice_cols(a, j, j + 1)?;
        let term = tape.mul_col(e, aj)?;
        ctx = Some(match ctx {
            None => term,
            Some(c) => tape.add(c, term)?,
        });
    }
    Ok((ctx.expect("non-empty"), a))
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, layout: InputLayout, seed: u64) -> Result<Self, PredictorError> {
        if config.hidden == 0 || config.layers == 0 || config.horizon == 0 || config.lookback == 0 {
            return Err(PredictorError::Config("hidden, layers, lookback and horizon must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let k = 1.0 / (h as f64).sqrt();
        let n_targets = layout.targets.len();
        let embed = if layout.embedding_slots() > 0 {
            Some(store.add_uniform("embed.incident", 3, config.embed_dim, k, &mut rng)?)
        } else {
            None
        };
        let input = layout.input_width(config.embed_dim);
        let encoder = GruStack::register(&mut store, "encoder", input, h, config.layers, &mut rng)?;
        let decoder = GruStack::register(&mut store, "decoder", n_targets, h, config.layers, &mut rng)?;
        let attn = if config.attention {
            Some(store.add_uniform("attention.w", h, h, k, &mut rng)?)
        } else {
            None
        };
        let head_in = if config.attention { 2 * h } else { h };
        let a = config.attention_hidden;
        let head = Head {
            w1: store.add_uniform("head.w1", head_in, a, k, &mut rng)?,
            b1: store.add("head.b1", Tensor::zeros(1, a))?,
            w2: store.add_uniform("head.w2", a, n_targets, k, &mut rng)?,
            b2: store.add("head.b2", Tensor::zeros(1, n_targets))?,
        };
        Ok(Self {
            config,
            layout,
            store,
            encoder,
            decoder,
            embed,
            attn,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    fn step_input(&self, tape: &mut Tape, batch: &Batch, j: usize) -> Result<Var, PredictorError> {
        let step = &batch.steps[j];
        let mut parts = vec![tape.constant(step.continuous.clone())?];
        if let Some(e) = self.embed {
            let table = tape.param(&self.store, e)?;
            if !self.layout.concat_segments.is_empty() {
                parts.push(tape.gather(table, &step.concat_status, self.layout.concat_segments.len())?);
            }
            if !self.layout.summed_segments.is_empty() {
                let counts = tape.constant(step.counts.clone())?;
                parts.push(tape.matmul(counts, table)?);
            }
        }
        Ok(tape.concat_cols(&parts)?)
    }

    fn zero_states(&self, tape: &mut Tape, rows: usize) -> Result<Vec<Var>, PredictorError> {
        (0..self.config.layers)
            .map(|_| Ok(tape.constant(Tensor::zeros(rows, self.config.hidden))?))
            .collect()
    }

    /// Runs the encoder. Returns the top-layer state of every step and the
    /// final state of every layer.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        train: bool,
        rng: &mut R,
    ) -> Result<(Vec<Var>, Vec<Var>), PredictorError> {
        if batch.steps.len() != self.config.lookback {
            return Err(PredictorError::Config(format!(
                "window has {} steps, model expects {}",
                batch.steps.len(),
                self.config.lookback
            )));
        }
        let mut states = self.zero_states(tape, batch.rows())?;
        let mut tops = Vec::with_capacity(batch.steps.len());
        for j in 0..batch.steps.len() {
            let x = self.step_input(tape, batch, j)?;
            states = self.encoder.step(tape, &self.store, x, &states, self.config.dropout, train, rng)?;
            tops.push(*states.last().expect("at least one layer"));
        }
        Ok((tops, states))
    }

    fn head(&self, tape: &mut Tape, h: Var, ctx: Option<Var>) -> Result<Var, NumericsError> {
        let z = match ctx {
            Some(c) => tape.concat_cols(&[h, c])?,
            None => h,
        };
        let w1 = tape.param(&self.store, self.head.w1)?;
        let b1 = tape.param(&self.store, self.head.b1)?;
        let w2 = tape.param(&self.store, self.head.w2)?;
        let b2 = tape.param(&self.store, self.head.b2)?;
        let a = tape.matmul(z, w1)?;
        let a = tape.add_row(a, b1)?;
        let a = tape.tanh(a)?;
        let o = tape.matmul(a, w2)?;
        tape.add_row(o, b2)
    }

    /// Autoregressive decoding from the encoder state. With `teacher` set
    /// and `train` on, each step after the first consumes the ground truth
    /// with probability `tf_ratio`, drawn once per step for the whole batch.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        init: Vec<Var>,
        y0: Var,
        encoder_states: &[Var],
        teacher: Option<&[Tensor]>,
        tf_ratio: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<DecodeOutput, PredictorError> {
        let horizon = self.config.horizon;
        if train {
            if let Some(t) = teacher {
                if t.len() < horizon {
                    return Err(PredictorError::ShortTeacher {
                        got: t.len(),
                        need: horizon,
                    });
                }
            }
        }
        let attn_w = match self.attn {
            Some(id) => Some(tape.param(&self.store, id)?),
            None => None,
        };
        let mut states = init;
        let mut input = y0;
        let mut out = DecodeOutput {
            predictions: Vec::with_capacity(horizon),
            inputs: vec![y0],
            forced: Vec::with_capacity(horizon.saturating_sub(1)),
            attention: Vec::new(),
        };
        for k in 0..horizon {
            states = self.decoder.step(tape, &self.store, input, &states, self.config.dropout, train, rng)?;
            let top = *states.last().expect("at least one layer");
            let ctx = match attn_w {
                Some(w) => {
                    let (c, a) = attend(tape, top, encoder_states, w)?;
                    out.attention.push(a);
                    Some(c)
                }
                None => None,
            };
            let pred = self.head(tape, top, ctx)?;
            out.predictions.push(pred);
            if k + 1 < horizon {
                let force = match teacher {
                    Some(t) if train => {
                        let f = rng.gen::<f64>() < tf_ratio;
                        f.then(|| t[k].clone())
                    }
                    _ => None,
                };
                out.forced.push(force.is_some());
                input = match force {
                    Some(truth) => tape.constant(truth)?,
                    None => pred,
                };
                out.inputs.push(input);
            }
        }
        Ok(out)
    }

    /// Full forward pass on a batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        tf_ratio: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<DecodeOutput, PredictorError> {
        let (enc, last) = self.encode(tape, batch, train, rng)?;
        let y0 = tape.constant(batch.y0.clone())?;
        self.decode(tape, last, y0, &enc, Some(&batch.targets), tf_ratio, train, rng)
    }

    /// Mean squared error of all horizons against the batch targets.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        tf_ratio: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, PredictorError> {
        let out = self.forward(tape, batch, tf_ratio, train, rng)?;
        let all = tape.concat_cols(&out.predictions)?;
        Ok(tape.mse(all, &batch.target_matrix())?)
    }

    /// Scaled predictions in evaluation mode, one `rows × targets` tensor per horizon.
    pub fn predict_scaled(&self, batch: &Batch) -> Result<Vec<Tensor>, PredictorError> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, batch, 0.0, false, &mut rng)?;
        Ok(out.predictions.iter().map(|&p| tape.value(p).clone()).collect())
    }

    /// Forecast in mph for each row of the batch: `[row][horizon][target]`.
    pub fn predict_mph(&self, batch: &Batch, scaler: &FrameScaler) -> Result<Vec<Vec<Vec<f64>>>, PredictorError> {
        let scaled = self.predict_scaled(batch)?;
        let targets = &self.layout.targets;
        Ok((0..batch.rows())
            .map(|r| {
                scaled
                    .iter()
                    .map(|p| {
                        p.row(r)
                            .iter()
                            .zip(targets)
                            .map(|(&s, &i)| scaler.unscale_speed(i, s).max(MIN_FORECAST_MPH))
                            .collect()
                    })
                    .collect()
            })
            .collect())
    }

    /// Forecast `[horizon][target]` in mph from the last `lookback` frames.
    pub fn forecast_frames(&self, history: &[RawFrame], scaler: &FrameScaler) -> Result<ForecastSequence, PredictorError> {
        let lookback = self.config.lookback;
        if history.len() < lookback {
            return Err(PredictorError::TooFewSamples {
                got: history.len(),
                need: lookback,
            });
        }
        let window = &history[history.len() - lookback..];
        let batch = inference_batch(window, scaler, &self.layout);
        let mut out = self.predict_mph(&batch, scaler)?;
        Ok(ForecastSequence {
            base_time: window[lookback - 1].timestamp,
            values: out.pop().expect("one row"),
        })
    }

    pub fn save(&self, path: &Path, scaler: &FrameScaler, network_fingerprint: &str) -> Result<(), PredictorError> {
        let meta = serde_json::json!({
            "kind": "seq2seq",
            "config": self.config,
            "layout": self.layout,
            "scaler": scaler,
            "network_fingerprint": network_fingerprint,
        });
        Ok(save_checkpoint(path, &self.store, meta)?)
    }

    /// Loads a checkpoint written by [`Seq2Seq::save`].
    pub fn load(path: &Path) -> Result<(Self, FrameScaler, String), PredictorError> {
        let (store, meta) = load_checkpoint(path)?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| PredictorError::Checkpoint(format!("missing {k}")));
        let config: ModelConfig = serde_json::from_value(field("config")?).map_err(|e| PredictorError::Checkpoint(e.to_string()))?;
        let layout: InputLayout = serde_json::from_value(field("layout")?).map_err(|e| PredictorError::Checkpoint(e.to_string()))?;
        let scaler: FrameScaler = serde_json::from_value(field("scaler")?).map_err(|e| PredictorError::Checkpoint(e.to_string()))?;
        let fingerprint = field("network_fingerprint")?.as_str().unwrap_or_default().to_string();
        let mut model = Self::new(config, layout, 0)?;
        if model.store.len() != store.len() || model.store.iter().zip(store.iter()).any(|(a, b)| a.0 != b.0) {
            return Err(PredictorError::Checkpoint("parameter names do not match the configuration".into()));
        }
        model.store.assign(store.values().to_vec())?;
        Ok((model, scaler, fingerprint))
    }
}

/// Speeds at +5..+horizon·5 minutes for every target segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSequence {
    pub base_time: Minutes,
    /// `[horizon][target]`, mph.
    pub values: Vec<Vec<f64>>,
}
