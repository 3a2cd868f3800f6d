use thiserror::Error;

/// Errors raised by the panel tools, the model solvers and the estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse field `{field}`")]
    Parse { row: usize, field: String },
    #[error("row {row}: field `{field}` out of range")]
    RangeViolation { row: usize, field: String },
    #[error("duplicate record for player `{player}` in round {round}")]
    DuplicateKey { player: String, round: u32 },
    #[error("player `{player}` maps to more than one {what}")]
    InconsistentMembership { player: String, what: &'static str },
    #[error("group `{group}` has {found} players, expected {expected}")]
    GroupSize { group: String, found: usize, expected: usize },
    #[error("io error: {0}")]
    Io(String),

    #[error("unknown player `{0}`")]
    UnknownPlayer(String),
    #[error("group of player `{player}` is incomplete in round {round}")]
    IncompleteGroup { player: String, round: u32 },
    #[error("empty panel")]
    EmptyPanel,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("trait value must be positive, got {0}")]
    NonPositiveTrait(f64),
    #[error("assumption b > kappa and b/N < kappa violated (b={b}, kappa={kappa}, N={n})")]
    AssumptionA1Violated { b: f64, kappa: f64, n: usize },
    #[error("no singular strategy: altruism weight must be positive")]
    NoSingularStrategy,

    #[error("fitness must stay positive, min w = {0}")]
    NegativeFitness(f64),
    #[error("both states absorbing: off-diagonal transitions are zero")]
    AbsorbingBothStates,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("target matrix is not row-stochastic")]
    NonStochasticTarget,

    #[error("need at least {needed} players, found {found}")]
    TooFewPlayers { needed: usize, found: usize },
    #[error("need at least {needed} villages, found {found}")]
    TooFewVillages { needed: usize, found: usize },
    #[error("need at least {needed} usable rounds, found {found}")]
    TooFewRounds { needed: usize, found: usize },
    #[error("emission standard deviation fell below the floor ({0})")]
    DegenerateEmission(f64),
    #[error("trajectory clustering requires complete paths")]
    IncompletePaths,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("missing trait `{0}` in covariates")]
    MissingTrait(String),
    #[error("insufficient lags: order {order} needs more than {rounds} rounds")]
    InsufficientLags { order: usize, rounds: u32 },
    #[error("row {0} is not covered by the demeaning plan")]
    UncoveredRow(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
