use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("field evaluation failed: {0}")]
    FieldEvaluation(String),

    #[error("degenerate point: |V| = {norm:e} at (theta={theta}, phi={phi})")]
    DegeneratePoint { theta: f64, phi: f64, norm: f64 },

    #[error("degenerate conditioning: a_22 = {0:e} is not positive")]
    DegenerateConditioning(f64),

    #[error("invalid covariance: smallest eigenvalue {min_eigenvalue:e} below tolerance")]
    InvalidCovariance { min_eigenvalue: f64 },

    #[error("quadrature did not converge: relative change {relative_change:e} at n = {nodes}")]
    Resolution { relative_change: f64, nodes: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_argument(&self) -> bool {
        matches!(self, Error::Argument(_))
    }
}
