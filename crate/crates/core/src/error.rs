use thiserror::Error;

use crate::operator::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("r*m = {product} is not an integer (tolerance 1e-9)")]
    InconsistentResolution { product: f64 },

    #[error("model parameter {name} = {value} outside [{lo}, {hi}]")]
    ModelOutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("could not parse model `{0}`")]
    ModelParse(String),

    #[error("conjugate gradient did not converge: {} iterations, relative residual {:.3e}", report.iterations, report.relative_residual)]
    NotConverged {
        report: SolveReport,
        best: Vec<f64>,
    },

    #[error("condition estimate failed: {0}")]
    EstimationFailed(String),

    #[error("subdomain contains no grid nodes")]
    EmptySubdomain,

    #[error("cell size {eps} is not a multiple of the grid spacing {h}")]
    UnresolvedCell { eps: f64, h: f64 },

    #[error("kernel of diameter {diameter} exceeds periodic domain side {side}")]
    KernelTooWide { diameter: f64, side: f64 },

    #[error("operation requires a {0} domain")]
    WrongBoundary(&'static str),

    #[error("grid resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("corrector asymmetry {0:.3e} exceeds 1e-4")]
    UnconvergedCorrector(f64),

    #[error("boundary band is empty")]
    EmptyBand,

    #[error("iterate already converged")]
    AlreadyConverged,

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
