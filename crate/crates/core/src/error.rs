use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("confidence level must lie in the open interval (0, 1), got {0}")]
    InvalidConfidence(f64),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empirical sample must contain at least one finite value")]
    EmptySample,

    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),

    #[error("bound is undefined: {0}")]
    UndefinedBound(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("observation {observation} has zero probability under the {model} model")]
    ImpossibleObservation { observation: usize, model: &'static str },

    #[error("enumeration budget exceeded: more than {budget} leaves")]
    BudgetExceeded { budget: u64 },

    #[error("all particle weights vanished after reweighting")]
    DegenerateWeights,

    #[error("proposal does not cover target support: {0}")]
    UnsupportedBelief(String),

    #[error("bound case not applicable: {0}")]
    InapplicableCase(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
