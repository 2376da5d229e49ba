use thiserror::Error;

/// Errors produced by model construction, fitting, prediction and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("covariate matrix is rank deficient: numerical rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "insufficient degrees of freedom: need N > m + q but N={n_units}, m={n_areas}, q={q}"
    )]
    DegreesOfFreedom {
        n_units: usize,
        n_areas: usize,
        q: usize,
    },

    #[error("posterior propriety conditions violated: {0}")]
    ConditionsViolated(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate latent state: {0}")]
    DegenerateLatent(String),

    #[error("GLS normal equations are numerically singular")]
    NumericalRank,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("population spec inconsistent with dataset: {0}")]
    PopulationMismatch(String),

    #[error("area {area_id} has no unsampled units (N_i = n_i)")]
    NoUnsampledUnits { area_id: String },

    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl Error {
    /// Tag an error with the sweep index it occurred in.
    pub(crate) fn at_sweep(self, sweep: usize) -> Error {
        Error::Sweep {
            sweep,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
