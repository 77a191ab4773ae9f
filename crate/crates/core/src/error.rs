use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("truncated-normal normalizer underflows (loc={loc}, scale={scale}, bounds=[{lower}, {upper}])")]
    DegenerateNormalizer {
        loc: f64,
        scale: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),
    #[error("vector is off the probability simplex: {0}")]
    OffSimplex(String),
    #[error("invalid HMM parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("invalid observation sequence: {0}")]
    InvalidObservations(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameters sit on a constraint boundary: {0}")]
    BoundaryParams(String),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("{divergent} of {total} post-warm-up transitions diverged")]
    AllDivergent { divergent: usize, total: usize },
    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("input file has no data rows")]
    EmptyFile,
    #[error("event {0} has no CDM released before the cut-off")]
    NoCdmBeforeCutoff(String),
    #[error("class {0} has no events")]
    EmptyClass(String),
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("posterior has no draws")]
    EmptyPosterior,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
