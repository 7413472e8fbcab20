use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed Newick at byte {pos}: {msg}")]
    MalformedNewick { pos: usize, msg: String },
    #[error("node at byte {pos} has {children} children; only binary trees are supported")]
    NonBinary { pos: usize, children: usize },
    #[error("negative branch length {length} at byte {pos}")]
    NegativeBranch { pos: usize, length: f64 },
    #[error("tree has zero height; branch-length normalisation is undefined")]
    DegenerateTree,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gave up after {0} rejected simulations")]
    TooManyRejections(usize),
    #[error("transmission tree has {0} sampling events; at least two are required")]
    FewerThanTwoSamples(usize),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("truth values are all identical; R^2 is undefined")]
    DegenerateTruth,
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
