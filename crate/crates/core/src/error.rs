use std::path::PathBuf;

/// Errors raised by the solver pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("invalid problem specification: {0}")]
    InvalidSpec(String),

    #[error("region `{region}` captures no mesh vertex; refine the mesh or enlarge the radius")]
    RegionResolution { region: String },

    #[error("sparse matrix build failed: {0}")]
    MatrixBuild(String),

    #[error("assembly failed: field `{field}` is not finite on element {element}")]
    Assembly { field: String, element: usize },

    #[error("initial guess solve did not converge (relative residual {residual:e})")]
    Initialization { residual: f64 },

    #[error("linear solve did not converge at outer step {outer_step}, inner iteration {inner_iter} (relative residual {residual:e})")]
    LinearNonConvergence {
        outer_step: usize,
        inner_iter: usize,
        residual: f64,
        history: Vec<crate::continuation::StepRecord>,
    },

    #[error("iterate became non-finite at outer step {outer_step}")]
    Divergence {
        outer_step: usize,
        history: Vec<crate::continuation::StepRecord>,
    },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
