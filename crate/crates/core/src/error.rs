use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid selection table: {0}")]
    InvalidTable(String),
    #[error("family {family} requires K = {expected}, got K = {got}")]
    IncompatibleK {
        family: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rank {rank} out of range 1..={n}")]
    RankOutOfRange { rank: usize, n: usize },
    #[error("threshold s* is unknown for this selection model")]
    UnknownThreshold,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad initial data: {0}")]
    BadInitialData(String),
    #[error("replacement cdf is not invertible: {0}")]
    NonInvertibleCdf(String),
    #[error("bad F table: {0}")]
    BadFTable(String),
    #[error("chain is reducible: {closed_classes} closed classes")]
    ReducibleChain { closed_classes: usize },
    #[error("s = {s} is supercritical (s >= 1/2): no limiting stationary distribution")]
    Supercritical { s: f64 },
    #[error("trial budget exceeded: excursion longer than {cap} steps after {completed} completed trials")]
    TrialBudgetExceeded { cap: u64, completed: usize },
    #[error("adaptive quadrature did not converge (estimated error {error:e})")]
    QuadratureNonConvergence { error: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("count trace never visits 0")]
    NoZeroVisit,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
