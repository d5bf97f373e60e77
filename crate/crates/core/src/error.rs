use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error("improper product: total precision is not positive definite")]
    ImproperProduct,
    #[error("improper cavity at site {index}")]
    ImproperCavity { index: usize },
    #[error("zero normalizer at term {index}")]
    ZeroNormalizer { index: usize },
    #[error("moment matching failed at term {index}: {source}")]
    MomentMatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("contradictory evidence at factor {factor}")]
    ContradictoryEvidence { factor: String },
    #[error("contradictory messages into variable {variable}")]
    ContradictoryMessages { variable: String },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("vanishing mass: tilted normalizer {0:e} is below 1e-280")]
    VanishingMass(f64),
    #[error("degenerate weights: every importance weight is zero")]
    DegenerateWeights,
    #[error("state space of {states} joint configurations exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },
    #[error("{n} observations exceed the enumeration bound of {limit}; use importance sampling instead")]
    TooManyObservations { n: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
