use std::fmt;

/// CLI failure classes, each with its own exit code:
/// 2 validation, 3 numerical, 4 I/O.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(msg) => write!(f, "validation failure: {msg}"),
            Failure::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Failure::Io(msg) => write!(f, "I/O failure: {msg}"),
        }
    }
}

impl From<uner::Error> for Failure {
    fn from(e: uner::Error) -> Self {
        use uner::Error::*;
        match &e {
            InvalidData(_) | RankDeficient { .. } | DegreesOfFreedom { .. }
            | ConditionsViolated(_) | Config(_) | PopulationMismatch(_)
            | NoUnsampledUnits { .. } => Failure::Validation(e.to_string()),
            Domain(_) | DegenerateData(_) | DegenerateLatent(_) | NumericalRank
            | Sweep { .. } | Simulation(_) => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;
