use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row p[{h}][{s}][{a}] does not sum to 1 (sum = {sum})")]
    NonStochasticRow {
        h: usize,
        s: usize,
        a: usize,
        sum: f64,
    },
    #[error("initial distribution does not sum to 1 (sum = {0})")]
    NonStochasticInitial(f64),
    #[error("negative probability in {0}")]
    NegativeEntry(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reward entry r[{h}][{s}][{a}] = {value} outside [-1, 1]")]
    RewardOutOfRange {
        h: usize,
        s: usize,
        a: usize,
        value: f64,
    },
    #[error("policy row pi[{h}][{s}] is not a distribution")]
    InvalidPolicyRow { h: usize, s: usize },
    #[error("feature vector phi({s},{a}) has norm {norm} > 1")]
    FeatureNormTooLarge { s: usize, a: usize, norm: f64 },
    #[error("theta at stage {h} has norm {norm} > sqrt(d)")]
    ThetaNormTooLarge { h: usize, norm: f64 },
    #[error("enumeration of {count} deterministic policies exceeds cap {cap}")]
    EnumerationTooLarge { count: f64, cap: u64 },
    #[error("invalid suboptimality band [{lower}, {upper}]")]
    InvalidBand { lower: f64, upper: f64 },
    #[error("initial distribution is not a point mass")]
    NonDeterministicInitialState,
    #[error("multiplicative compatibility is undefined when J* = 0")]
    UndefinedForZeroOptimum,
    #[error("multiplicative compatibility requires nonnegative rewards")]
    NegativeReward,
    #[error("empty list")]
    EmptyList,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("need at least {need} trajectories, got {have}")]
    TooFewTrajectories { have: usize, need: usize },
    #[error("exploration budget must be at least 1")]
    BudgetTooSmall,
    #[error("bpi-ucbvi exploration needs the reward list up front")]
    MissingRewardsForBpiMode,
    #[error("reward {0} was not explored for in bpi-ucbvi mode")]
    UnknownRewardForBpiMode(String),
    #[error("floor {min_prob} is infeasible with {states} states")]
    InvalidFloor { min_prob: f64, states: usize },
    #[error("theta {0} outside [-1, 1]")]
    ThetaOutOfRange(f64),
    #[error("q {0} outside [0, 1]")]
    QOutOfRange(f64),
    #[error("observations are inconsistent with every hypothesis")]
    InconsistentObservations,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("instance too large for exact oracle: {0}")]
    OracleTooLarge(String),
    #[error("no records to summarize")]
    EmptyRecords,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration-class errors map to exit code 2 in the CLI.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigInvalid(_)
                | Error::Json(_)
                | Error::InvalidBand { .. }
                | Error::InvalidFloor { .. }
                | Error::ThetaOutOfRange(_)
                | Error::QOutOfRange(_)
                | Error::OracleTooLarge(_)
        )
    }
}
