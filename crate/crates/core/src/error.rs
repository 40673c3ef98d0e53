use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("catalog model `{kind}` expects {expected} cardinalities, got {got}")]
    ArityMismatch {
        kind: String,
        expected: String,
        got: usize,
    },

    #[error("requested orientation is not Markov equivalent: {0}")]
    NotEquivalent(String),

    #[error("bad index set: {0}")]
    BadIndexSet(String),

    #[error("tensor dims {got:?} do not match model cardinalities {expected:?}")]
    DimMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("count underflow at cell {0:?}")]
    Underflow(Vec<usize>),

    #[error("cell {0:?} holds no tokens")]
    CellEmpty(Vec<usize>),

    #[error("operation needs the full cell map, which this state does not track")]
    CellsNotTracked,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("tensor file has no `dims` line")]
    DimsLineMissing,

    #[error("line {line}: duplicate entry {index:?}")]
    DuplicateEntry { line: usize, index: Vec<usize> },

    #[error("no remaining tokens to propose")]
    Exhausted,

    #[error("latent configuration space has {size} cells, above the cap {cap}")]
    LatentSpaceTooLarge { size: f64, cap: usize },

    #[error("enumeration would visit {size:e} allocation tensors, above the cap {cap:e}")]
    SearchSpaceTooLarge { size: f64, cap: f64 },

    #[error("all particle weights are zero: the observation is impossible under the model")]
    AllWeightsZero,

    #[error("tensor carries missing entries; this route needs a fully observed tensor")]
    MaskedTensor,

    #[error("unsupported tying pattern: {0}")]
    UnsupportedTying(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
