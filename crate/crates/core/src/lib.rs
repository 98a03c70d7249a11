//! Revealed-preference tools for multi-agent systems that share a linear budget.
//!
//! * [`afriat`]: coordination test, proximity statistic and naive utility recovery.
//! * [`robust`]: Wasserstein distributionally robust estimator (exchange method).
//! * [`forward`]: synthetic coordinated datasets.
//! * [`eval`]: Pareto-surface comparison and the Monte-Carlo harness.
//! * [`linfeas`]: the dense simplex kernel behind all of the above.

pub mod afriat;
pub mod cli;
pub mod error;
pub mod eval;
pub mod forward;
pub mod linfeas;
pub mod robust;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_dataset, AmbiguityConfig, Dataset, DualPair, ExchangeState, ParameterVector, Piece,
    ProbeVector, Scenario, SignalSet, SignalVector, UtilityFunction, Violation,
};
