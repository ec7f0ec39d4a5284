use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("cannot parse value {value:?} at row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dataset needs at least 2 rows, found {0}")]
    EmptyData(usize),

    #[error("column `{0}` has zero variance")]
    ConstantColumn(String),

    #[error("design matrix is rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("no convergence after {iterations} iterations ({context})")]
    NonConvergence { iterations: usize, context: String },

    #[error("cross-validation fold {fold} has {rows} rows; at least 2 required")]
    DegenerateFolds { fold: usize, rows: usize },

    #[error("mixture slab variance collapsed to {0:.3e}")]
    DegenerateComponent(f64),

    #[error("negative variance estimate {0:.3e}")]
    NegativeVariance(f64),

    #[error("model is exactly identified ({instruments} instruments, {endogenous} endogenous); over-identification test undefined")]
    NotOverIdentified {
        instruments: usize,
        endogenous: usize,
    },

    #[error("infeasible simulation design: {0}")]
    InfeasibleDesign(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no variables were selected")]
    EmptySelection,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Data errors are problems with the inputs; numerical errors come from the
    /// estimation itself. The CLI maps the two onto distinct exit codes.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NonConvergence { .. }
                | Error::DegenerateComponent(_)
                | Error::NegativeVariance(_)
        )
    }
}
