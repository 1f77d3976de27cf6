//! The six solvers, the pointwise maps `F`, `P_G`, `𝓗`, `F̃` they are built
//! from, and the Tikhonov error bound.

mod argmin;
mod overdetermined;
mod regularized;
mod underdetermined;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use argmin::{inversion_map, least_norm_map, projection, reg_inversion_map, Pullback};
pub use overdetermined::{
    conditional_reconstruction, conditional_reconstruction_with, marginal_reconstruction,
    marginal_reconstruction_with,
};
pub use regularized::{
    augmented_objective_identity_check, reg_entropy_solution, reg_wp_solution, reg_wp_solution_with,
    tikhonov_bound, TikhonovBound,
};
pub use underdetermined::{
    entropy_solution, level_set_mass, moment_solution, moment_solution_with, FiberBins,
};

use crate::error::{Error, Result};
use crate::measures::{GridMeasure, Measure};
use crate::transport::OtMethod;

/// Particle counts above this skip the dense OT solve in reports and fall
/// back to the paired-coupling bound (one-dimensional data is always exact).
pub const REPORT_OT_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Conditional,
    Marginal,
    Entropy,
    Moment,
    RegEntropy,
    RegWp,
}

impl Formulation {
    pub const ALL: [Formulation; 6] = [
        Formulation::Conditional,
        Formulation::Marginal,
        Formulation::Entropy,
        Formulation::Moment,
        Formulation::RegEntropy,
        Formulation::RegWp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Conditional => "conditional",
            Formulation::Marginal => "marginal",
            Formulation::Entropy => "entropy",
            Formulation::Moment => "moment",
            Formulation::RegEntropy => "reg-entropy",
            Formulation::RegWp => "reg-wp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown formulation '{s}'")))
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationConfig {
    pub alpha: f64,
    pub p: f64,
    /// Prior density `𝓜` on the parameter grid.
    pub prior: Option<GridMeasure>,
}

impl RegularizationConfig {
    pub fn new(alpha: f64, p: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
        }
        Ok(Self { alpha, p, prior: None })
    }

    pub fn with_prior(mut self, prior: GridMeasure) -> Self {
        self.prior = Some(prior);
        self
    }
}

/// Controls for the derivative-free pointwise argmins.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Total lattice points (over the bounding box of Θ) for the coarse scan.
    pub coarse_points: usize,
    /// Number of step halvings in the compass refinement.
    pub halvings: usize,
    /// Maximum sweeps over the coordinate directions at one step size.
    pub max_passes: usize,
    /// Number of best coarse points refined independently.
    pub starts: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            coarse_points: 129 * 129,
            halvings: 50,
            max_passes: 64,
            starts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub optimizer: Measure,
    pub pushforward_of_optimizer: Measure,
    pub objective: f64,
    pub method: Formulation,
    /// Transport solver used for the objective, where one was needed.
    pub transport: Option<OtMethod>,
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl SolveReport {
    fn new(optimizer: Measure, pushforward: Measure, objective: f64, method: Formulation) -> Self {
        Self {
            optimizer,
            pushforward_of_optimizer: pushforward,
            objective,
            method,
            transport: None,
            diagnostics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn diag(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulation_names_round_trip() {
        for f in Formulation::ALL {
            assert_eq!(Formulation::parse(f.name()).unwrap(), f);
            assert_eq!(f.to_string(), f.name());
        }
        assert!(Formulation::parse("lasso").is_err());
    }

    #[test]
    fn regularization_config_validation() {
        assert!(RegularizationConfig::new(-1.0, 2.0).is_err());
        assert!(RegularizationConfig::new(1.0, 0.5).is_err());
        let cfg = RegularizationConfig::new(0.0, 2.0).unwrap();
        assert!(cfg.prior.is_none());
    }
}
