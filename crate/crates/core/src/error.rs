use thiserror::Error;

/// Errors raised by the realization pipeline and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time index {index} outside [{lo}, {hi}]")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sequence of length {n_steps} is too short for order {order}: need at least {required} steps")]
    TooShort {
        n_steps: usize,
        order: usize,
        required: usize,
    },

    #[error("lag {lag} at ({k}, {l}) exceeds the stored band of {band}")]
    LagOutOfBand {
        k: usize,
        l: usize,
        lag: usize,
        band: usize,
    },

    #[error("rank deficiency at anchor {anchor}: sigma_n = {sigma_n:.3e} below tolerance {tol:.3e}")]
    RankDeficient { anchor: usize, sigma_n: f64, tol: f64 },

    #[error("no stationary Hankel differences below epsilon = {epsilon:.3e}")]
    EmptyStationarySet { epsilon: f64 },

    #[error("no stationary interval reaches the minimum length {min_len}")]
    NoLongIntervals { min_len: usize },

    #[error("no switch detected within {bound} steps of {start} ({direction})")]
    NoDetection {
        start: usize,
        bound: usize,
        direction: &'static str,
    },

    #[error("ambiguous submodel at {k}: best {best:.3e} and runner-up {second:.3e} within margin")]
    AmbiguousSubmodel { k: usize, best: f64, second: f64 },

    #[error("no boundary switch known: every index of the window is unassigned")]
    NoBoundarySwitch,

    #[error("conflicting labels at {k}: {existing} from {existing_source} vs {incoming} from {incoming_source}")]
    Conflict {
        k: usize,
        existing: usize,
        existing_source: &'static str,
        incoming: usize,
        incoming_source: &'static str,
    },

    #[error("labels {0:?} are not reachable from label 1 through well-conditioned switches")]
    Unreachable(Vec<usize>),

    #[error("ill-conditioned matrix ({context}): condition number {cond:.3e}")]
    IllConditioned { context: String, cond: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("sampling budget of {budget} draws exhausted: {reason}")]
    BudgetExhausted { budget: usize, reason: String },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
