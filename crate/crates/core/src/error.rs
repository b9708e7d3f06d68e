use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid parameters for `{model}`: {reason}")]
    InvalidParameters { model: String, reason: String },
    #[error("taylor order {k} outside 0..={max}")]
    TaylorOrder { k: usize, max: usize },
    #[error("trajectory escaped the box |z| <= {bound} at t = {time}")]
    Escape { time: f64, bound: f64 },
    #[error("integrator: {0}")]
    Integration(String),
    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: String, detail: String },
    #[error("degenerate hyperbolicity: {0}")]
    DegenerateHyperbolicity(String),
    #[error("point is off the invariant set by {0:e}")]
    OffInvariantSet(f64),
    #[error("caustic: |det| = {0:e}")]
    Caustic(f64),
    #[error("Siegel property violated: {0}")]
    Siegel(String),
    #[error("projectability lost: {0}")]
    Projectability(String),
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("axis mismatch")]
    AxisMismatch,
    #[error("aliasing: spectral tail {0:e} above tolerance")]
    Aliasing(f64),
    #[error("model `{0}` is not of kinetic + potential form")]
    NotKineticPotential(String),
    #[error("symplectic factorization failed: {0}")]
    Factorization(String),
    #[error("threshold: {0}")]
    Threshold(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing provenance metadata")]
    MissingProvenance,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Escape, caustic and projectability style failures.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            Error::Escape { .. }
            | Error::Integration(_)
            | Error::NonConvergence { .. }
            | Error::DegenerateHyperbolicity(_)
            | Error::Caustic(_)
            | Error::Siegel(_)
            | Error::Projectability(_)
            | Error::GridTooSmall(_)
            | Error::Aliasing(_)
            | Error::Factorization(_)
            | Error::Threshold(_) => true,
            _ => false,
        }
    }
}
