use thiserror::Error;

/// Errors raised across the forward, ROM and inversion stages.
#[derive(Debug, Error)]
pub enum LslError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("s = {re}{im:+}i is too close to a pole (reciprocal condition estimate {rcond:.3e})")]
    PoleProximity { re: f64, im: f64, rcond: f64 },

    #[error("eigenvector {index} has degenerate W-normalization |q^T W q| = {value:.3e}")]
    DegenerateNormalization { index: usize, value: f64 },

    #[error("eigenvalue iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("requested {requested} pole pairs but only {available} are available")]
    Range { requested: usize, available: usize },

    #[error("duplicate interpolation node omega = {0}")]
    DegenerateNode(f64),

    #[error("matrix pencil is singular at s = {re}{im:+}i")]
    PencilSingular { re: f64, im: f64 },

    #[error("pencil truncation removed every direction (tolerance {0:.3e})")]
    OverTruncation(f64),

    #[error("Lanczos breakdown at step {step}: |w^T w| = {magnitude:.3e}")]
    Breakdown {
        step: usize,
        magnitude: f64,
        partial: Box<crate::lanczos::PartialTridiag>,
    },

    #[error("structure violation: {0}")]
    Structure(String),

    #[error("background basis does not match ROM: {0}")]
    BasisMismatch(String),

    #[error("ill-conditioned basis (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("degenerate least-squares system: {0}")]
    DegenerateSystem(String),

    #[error("finite-difference extraction broke down at index {0}")]
    ExtractionBreakdown(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LslError>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

pub type Result<T> = std::result::Result<T, LslError>;

impl LslError {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        LslError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
