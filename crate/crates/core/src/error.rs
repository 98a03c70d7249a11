use thiserror::Error;

use crate::types::ExchangeState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed linear system: {0}")]
    MalformedSystem(String),

    /// Pivoting exceeded the iteration cap; indicates numerical pathology.
    #[error("simplex exceeded the iteration cap of {0} pivots")]
    CycleLimit(usize),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("solver witness failed re-verification (max violation {0:e})")]
    WitnessCheck(f64),

    #[error("Afriat system infeasible at slack {slack} (proximity is larger)")]
    InfeasibleAtSlack { slack: f64 },

    #[error("forward solver did not converge (KKT residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("exchange loop hit the iteration cap of {cap} (last cv {last_cv})")]
    IterationCapExceeded {
        cap: usize,
        last_cv: f64,
        state: Box<ExchangeState>,
    },

    #[error("master problem infeasible over the whole dual box")]
    MasterInfeasible,

    #[error("point set is empty")]
    EmptySet,
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Error::InvalidInput(_) | Error::MalformedSystem(_) | Error::EmptySet)
    }
}
