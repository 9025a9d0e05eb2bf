use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix is rank deficient (rank {rank} < {k} columns)")]
    RankDeficientDesign { rank: usize, k: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("too few samples: n = {n} but at least {required} are needed")]
    TooFewSamples { n: usize, required: usize },
    #[error("covariate of interest {0} is out of range")]
    InterestOutOfRange(usize),
    #[error("contrast vector is zero")]
    ZeroContrast,
    #[error("variance must be strictly positive (index {0})")]
    NonPositiveVariance(usize),
    #[error("number of factors q = {q} too large (max {max})")]
    QTooLarge { q: usize, max: usize },
    #[error("weighted Gram matrix is singular")]
    SingularWeightedGram,
    #[error("degenerate mixture component {0}: zero-width interval")]
    DegenerateComponent(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("gamma = 1 with free variance inflation requires lambda_xi > 0")]
    UnidentifiableConfig,
    #[error("subsample of {s} genes too small for q = {q} factors (need at least {min})")]
    SubsampleTooSmall { s: usize, q: usize, min: usize },
    #[error("need both null and non-null genes to compute AUC")]
    SingleClass,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
