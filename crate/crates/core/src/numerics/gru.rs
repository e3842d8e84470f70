use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

/// One GRU layer with fused gate matrices.
///
/// Column blocks of `w_input` and `bias` are `[z | r | candidate]`;
/// `w_hidden_zr` holds the recurrent update/reset weights and
/// `w_hidden_cand` the recurrent candidate weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_input: ParamId,
    pub w_hidden_zr: ParamId,
    pub w_hidden_cand: ParamId,
    pub bias: ParamId,
}

impl GruCellParams {
    /// Weights uniform in `±1/√hidden`, zero biases.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let k = 1.0 / (hidden_size as f64).sqrt();
        let h = hidden_size;
        Ok(Self {
            input_size,
            hidden_size,
            w_input: store.add_uniform(&format!("{prefix}.w_input"), input_size, 3 * h, k, rng)?,
            w_hidden_zr: store.add_uniform(&format!("{prefix}.w_hidden_zr"), h, 2 * h, k, rng)?,
            w_hidden_cand: store.add_uniform(&format!("{prefix}.w_hidden_cand"), h, h, k, rng)?,
            bias: store.add(&format!("{prefix}.bias"), Tensor::zeros(1, 3 * h))?,
        })
    }

    /// Looks up an already registered layer by prefix.
    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self, NumericsError> {
        let get = |s: &str| {
            store
                .id(&format!("{prefix}.{s}"))
                .ok_or_else(|| NumericsError::MissingParam(format!("{prefix}.{s}")))
        };
        let w_input = get("w_input")?;
        let w_hidden_cand = get("w_hidden_cand")?;
        Ok(Self {
            input_size: store.get(w_input).rows(),
            hidden_size: store.get(w_hidden_cand).rows(),
            w_input,
            w_hidden_zr: get("w_hidden_zr")?,
            w_hidden_cand,
            bias: get("bias")?,
        })
    }
}

/// `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `ĥ = tanh(x Wc + (r ⊙ h) Uc + bc)`, `h' = (1 - z) ⊙ h + z ⊙ ĥ`.
/// Rows of `x` and `h` are batch samples.
pub fn gru_step(
    tape: &mut Tape,
    store: &ParamStore,
    cell: &GruCellParams,
    x: Var,
    h: Var,
) -> Result<Var, NumericsError> {
    let hs = cell.hidden_size;
    if tape.shape(h).1 != hs || tape.shape(x).1 != cell.input_size {
        return Err(NumericsError::Shape {
            op: "gru_step",
            left: tape.shape(x),
            right: tape.shape(h),
        });
    }
    let wi = tape.param(store, cell.w_input)?;
    let wzr = tape.param(store, cell.w_hidden_zr)?;
    let wc = tape.param(store, cell.w_hidden_cand)?;
    let b = tape.param(store, cell.bias)?;

    let gx = tape.matmul(x, wi)?;
    let gx = tape.add_row(gx, b)?;
    let gx_zr = tape.slice_cols(gx, 0, 2 * hs)?;
    let gx_c = tape.slice_cols(gx, 2 * hs, 3 * hs)?;
    let gh_zr = tape.matmul(h, wzr)?;
    let pre_zr = tape.add(gx_zr, gh_zr)?;
    let zr = tape.sigmoid(pre_zr)?;
    let z = tape.slice_cols(zr, 0, hs)?;
    let r = tape.slice_cols(zr, hs, 2 * hs)?;
    let rh = tape.mul(r, h)?;
    let gh_c = tape.matmul(rh, wc)?;
    let pre_c = tape.add(gx_c, gh_c)?;
    let cand = tape.tanh(pre_c)?;
    let keep = tape.one_minus(z)?;
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// Stacked GRU layers with dropout on the hidden state passed between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStack {
    pub layers: Vec<GruCellParams>,
}

impl GruStack {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input_size } else { hidden_size };
            out.push(GruCellParams::register(store, &format!("{prefix}.{l}"), inp, hidden_size, rng)?);
        }
        Ok(Self { layers: out })
    }

    pub fn find(store: &ParamStore, prefix: &str, layers: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            layers: (0..layers)
                .map(|l| GruCellParams::find(store, &format!("{prefix}.{l}")))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size
    }

    /// Advances every layer one step. Returns the new per-layer states; the
    /// last entry is the top-layer output.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        states: &[Var],
        dropout: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>, NumericsError> {
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (l, cell) in self.layers.iter().enumerate() {
            if l > 0 {
                input = tape.dropout(input, dropout, train, rng)?;
            }
            let h = gru_step(tape, store, cell, input, states[l])?;
            next.push(h);
            input = h;
        }
        Ok(next)
    }
}
