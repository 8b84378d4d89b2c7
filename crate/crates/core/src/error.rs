use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("amplitude solver: K not monotonic on [{lo}, {hi}] px")]
    NonMonotonic { lo: f64, hi: f64 },

    #[error("target total curvature {target} unreachable with amplitude <= {limit} px")]
    Unreachable { target: f64, limit: f64 },

    #[error("trial set assembly: no candidate for cell {0}")]
    Assembly(String),

    #[error("missing feature `{0}`")]
    MissingFeature(&'static str),

    #[error("model evaluation: {0}")]
    Evaluation(String),

    #[error("singular design matrix")]
    SingularDesign,

    #[error("insufficient data: {n} points for {p} coefficients")]
    InsufficientData { n: usize, p: usize },

    #[error("adjusted r2 undefined: {n} points, {p} predictors")]
    UndefinedDf { n: usize, p: usize },

    #[error("nonlinear fit did not converge after {iterations} iterations (last rss {last_rss})")]
    NonConvergence {
        iterations: usize,
        last_rss: f64,
        trace: Vec<f64>,
    },

    #[error("fits are not comparable: {0}")]
    Incomparable(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("incomplete trial: {0}")]
    IncompleteTrial(String),

    #[error("unknown trial id `{0}`")]
    UnknownTrial(String),

    #[error("session plan: {0}")]
    Plan(String),

    #[error("protocol error: event `{event}` not allowed in phase `{phase}`")]
    Protocol { phase: String, event: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than internal failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::NonConvergence { .. } | Error::NonMonotonic { .. }
        )
    }
}
