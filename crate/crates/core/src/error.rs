use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),

    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),

    #[error("generator {index} references unknown bus {bus}")]
    DanglingGenerator { index: usize, bus: usize },

    #[error("invalid case data: {0}")]
    InvalidCase(String),

    #[error("region index {index} out of range 1..={n_regions}")]
    RegionOutOfRange { index: usize, n_regions: usize },

    #[error("duplicate connection {from:?} -> {to:?}")]
    DuplicateConnection { from: (usize, usize), to: (usize, usize) },

    #[error("region connection graph is disconnected: region {0} is unreachable from the master")]
    DisconnectedRegions(usize),

    #[error("invalid connection specification: {0}")]
    InvalidConnection(String),

    #[error(
        "bus {bus} of region {region} is a {found} bus; connecting buses must be generation buses (slack or PV)"
    )]
    NotGenerationBus {
        region: usize,
        bus: usize,
        found: &'static str,
    },

    #[error("multiple master regions given: {0:?}")]
    MultipleMasters(Vec<usize>),

    #[error("branch {index} has zero impedance (r = x = 0)")]
    SingularBranch { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("copy bus provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("Newton-Raphson did not converge in {iterations} iterations (mismatch {mismatch:e})")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("line search failed after {iterations} iterations (gradient norm {gradient:e})")]
    LineSearchFailure { iterations: usize, gradient: f64 },

    #[error("local solver hit its iteration limit ({iterations}) with residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("the Gauss-Newton Hessian is only defined for the least-squares formulation")]
    GaussNewtonFeasibility,

    #[error("missing Hessian context: {0}")]
    MissingContext(&'static str),

    #[error("local solve failed in region {region}: {source}")]
    LocalSolve {
        region: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("divergence detected: consensus violation {0:e}")]
    Divergence(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::DuplicateBus(_)
                | Error::SlackCount(_)
                | Error::DanglingGenerator { .. }
                | Error::InvalidCase(_)
                | Error::RegionOutOfRange { .. }
                | Error::DuplicateConnection { .. }
                | Error::DisconnectedRegions(_)
                | Error::InvalidConnection(_)
                | Error::NotGenerationBus { .. }
                | Error::MultipleMasters(_)
                | Error::SingularBranch { .. }
                | Error::GaussNewtonFeasibility
                | Error::Config(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
