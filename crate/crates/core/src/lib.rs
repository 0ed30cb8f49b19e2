//! Competing-events workbench for controlled and separable direct effects.
//!
//! The crate has three layers:
//!
//! - [`dgp`] and [`oracle`]: a fully parameterized logistic data-generating
//!   process with exact closed-form values of the counterfactual risks, their
//!   observed-data statistical targets, and the estimand / non-identification
//!   error decomposition, cross-checked against a brute-force joint table.
//! - [`estimators`] and [`survival`]: the inverse probability of censoring
//!   weighted (IPCW) estimator and the separable-direct-effect weighted
//!   estimator, for a single time point and for discrete-time survival data
//!   with a pooled logistic hazard for the competing event.
//! - [`simharness`]: variance studies and coefficient sweeps built on the two
//!   layers above.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod oracle;
pub mod rng;
pub mod simharness;
pub mod stats;
pub mod survival;

pub use error::{Error, Result};

/// Which direct effect an estimate or curve targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Estimand {
    /// Controlled direct effect: competing events eliminated.
    Cde,
    /// Separable direct effect with the competing-event component held at `a_d`.
    Sde { a_d: u8 },
}

impl Estimand {
    pub fn label(&self) -> String {
        match self {
            Estimand::Cde => "CDE".to_string(),
            Estimand::Sde { a_d } => format!("SDE_aD{a_d}"),
        }
    }
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}
