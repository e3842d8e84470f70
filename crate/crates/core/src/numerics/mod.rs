//! Dense tensors, reverse-mode differentiation, GRU cells and Adam.

pub mod adam;
pub mod checkpoint;
pub mod gru;
pub mod params;
pub mod tape;
pub mod tensor;

use std::path::PathBuf;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gru::{gru_step, GruCellParams, GruStack};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("shape {shape:?} needs {} values, got {len}", .shape.0 * .shape.1)]
    DataLength { shape: (usize, usize), len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("columns {start}..{end} out of range for shape {shape:?}")]
    Slice { shape: (usize, usize), start: usize, end: usize },
    #[error("row index {index} out of range for {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("dropout probability {0} must be below 1")]
    Probability(f64),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
