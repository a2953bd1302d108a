use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point lies outside the closed domain")]
    OutsideDomain,
    #[error("operation requires a bounded domain")]
    Unbounded,
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("duplicate Voronoi site {0}")]
    DuplicateSite(usize),
    #[error("site {0} lies outside the domain")]
    SiteOutsideDomain(usize),
    #[error("cell {cell} received no Monte-Carlo samples; increase mc_per_cell")]
    EmptyCell { cell: usize },
    #[error("scale ordering violated: need 0 < a_n < b_n, got a_n = {a}, b_n = {b}")]
    ScaleOrder { a: f64, b: f64 },
    #[error("cell {cell}: rho must exceed delta on boundary cells and equal it elsewhere (rho = {rho}, delta = {delta})")]
    ScaleRelation { cell: usize, rho: f64, delta: f64 },
    #[error("scales have not been assigned")]
    ScalesMissing,
    #[error("cell {0} has an empty neighbour set")]
    EmptyNeighbourhood(usize),
    #[error("threshold function has no sign change on (0, {upper})")]
    NoSignChange { upper: f64 },
    #[error("cell {0}: no inscribed ball found inside its neighbourhood")]
    NoInscribedBall(usize),
    #[error("cell {0} is not valid for this operation (q <= 0 or |c| >= 1)")]
    InvalidCell(usize),
    #[error("cell {cell}: negative jump weight {weight:e}")]
    NegativeWeight { cell: usize, weight: f64 },
    #[error("cell id {0} out of range")]
    NoSuchCell(usize),
    #[error("time step too large: step of length {step} exceeds domain diameter {diameter}")]
    StepTooLarge { step: f64, diameter: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("empty sample")]
    EmptySample,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {0}; run the earlier pipeline stage first")]
    MissingArtifact(String),
    #[error("malformed artifact {path}: {msg}")]
    Artifact { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
