use thiserror::Error;

/// Everything that can go wrong in the simulation and reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coin angle psi = {0} deg must lie in the open interval (0, 90)")]
    InvalidCoinAngle(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("spread speed needs n >= 1")]
    ZeroSteps,

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("degenerate encoding: N_q = {0:e} for row {1}")]
    DegenerateEncoding(f64, usize),

    #[error("C1 ~ 0: ratio undefined")]
    RatioUndefined,

    #[error("underdetermined system: {rows} constraint rows for {unknowns} unknowns")]
    Underdetermined { rows: usize, unknowns: usize },

    #[error("ambiguous null space: sigma_next / ||M|| = {0:e}")]
    AmbiguousNullSpace(f64),

    #[error("path-1 V amplitude vanishes: count ratio undefined at this theta")]
    CountRatioUndefined,

    #[error("weight recovery degenerate; re-plan theta*")]
    WeightRecoveryDegenerate,

    #[error("planning failed: {0}")]
    PlanningFailed(String),

    #[error("missing measurement: {0}")]
    MissingMeasurement(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short stable name of the innermost error, for tallies and CSV columns.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::InvalidCoinAngle(_) => "invalid-coin-angle",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::NotNormalized(_) => "not-normalized",
            Error::ZeroSteps => "zero-steps",
            Error::NotPsd(_) => "not-psd",
            Error::DegenerateEncoding(..) => "degenerate-encoding",
            Error::RatioUndefined => "ratio-undefined",
            Error::Underdetermined { .. } => "underdetermined",
            Error::AmbiguousNullSpace(_) => "ambiguous-null-space",
            Error::CountRatioUndefined => "count-ratio-undefined",
            Error::WeightRecoveryDegenerate => "weight-recovery-degenerate",
            Error::PlanningFailed(_) => "planning-failed",
            Error::MissingMeasurement(_) => "missing-measurement",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Stage { .. } => unreachable!("root never returns a stage tag"),
        }
    }

    /// The innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
