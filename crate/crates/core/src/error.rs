use thiserror::Error;

/// Errors raised by the simulation and reconstruction pipeline.
///
/// Variants fall into two families: contract/configuration problems
/// (bad inputs, violated preconditions) and numerical failures (solver
/// breakdown, non-convergence). [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("mesh generation failed: {0}")]
    Mesh(String),

    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("anomaly has no pixels")]
    NoAnomaly,

    #[error("unknown pixel id {0}")]
    UnknownPixel(usize),

    #[error("{boundary} boundary vertices cannot resolve {patterns} current patterns without aliasing (need at least {needed})")]
    Aliasing {
        boundary: usize,
        patterns: usize,
        needed: usize,
    },

    #[error("cannot scale noise by the norm of a zero matrix")]
    DegenerateNorm,

    #[error("dipole position |z| = {0} is too close to the boundary")]
    DipoleConditioning(f64),

    #[error("linear solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for solver and factorization failures, false for contract,
    /// configuration, format and I/O problems.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SolverDivergence { .. } | Error::Factorization(_) | Error::Mesh(_) => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
