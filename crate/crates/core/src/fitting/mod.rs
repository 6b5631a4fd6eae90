//! Inverse problem on decay histograms: tail rate, 1/e lifetime, the
//! collective-emission fit and two baseline models.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ladder::{bulk_isc_0, bulk_isc_1, InitialStateSpec};
use crate::units::mhz_to_rate;

mod baseline;
mod compare;
mod loss;
mod superradiant;
mod tail;
mod trace;

pub use baseline::{fit_biexponential, fit_deformed_exponential, fit_single_exponential};
pub use compare::{compare_models, ModelComparison};
pub use loss::loss_value;
pub use superradiant::{fit_superradiant, ForwardModel, SuperradiantParams};
pub use tail::{lifetime_1e, lifetime_window, tail_fit_gamma, tail_rate};
pub use trace::{synthesize_trace, BinLayout, DecayTrace};

/// Objective minimized between model and histogram.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitLoss {
    /// Sum of squared residuals after background subtraction.
    LeastSquares,
    /// Poisson deviance with the background added to the model.
    #[default]
    PoissonNll,
}

/// Parameters held at a given value instead of fitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedParams {
    pub n_max: Option<usize>,
    pub gamma: Option<f64>,
    pub gamma_d_0: Option<f64>,
    pub gamma_d_1: Option<f64>,
    pub p0: Option<f64>,
}

/// Search space and settings of [`fit_superradiant`]. Rates in rad/s,
/// times in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Inclusive range of the largest domain size.
    pub n_range: (usize, usize),
    /// Dephasing bounds for `σ = 0` and `σ = ±1`.
    pub dephasing_bounds: [(f64, f64); 2],
    pub polarization_bounds: (f64, f64),
    /// Window for the tail fit; by default from 10 ns after the peak to the
    /// end of the trace.
    pub tail_window: Option<(f64, f64)>,
    pub loss: FitLoss,
    pub fixed: FixedParams,
    /// Intersystem-crossing rates for `σ = 0` and `σ = ±1`.
    pub isc: (f64, f64),
    /// Domain-size variance as a multiple of the largest size.
    pub variance_ratio: f64,
    pub initial_state: InitialStateSpec,
    /// Refinement budget per domain size.
    pub max_iters: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_range: (1, 20),
            dephasing_bounds: [(0.0, mhz_to_rate(2000.0)), (0.0, mhz_to_rate(2000.0))],
            polarization_bounds: (0.0, 1.0),
            tail_window: None,
            loss: FitLoss::default(),
            fixed: FixedParams::default(),
            isc: (bulk_isc_0(), bulk_isc_1()),
            variance_ratio: 0.5,
            initial_state: InitialStateSpec::default(),
            max_iters: 400,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.n_range;
        if lo == 0 || lo > hi || hi > crate::ladder::MAX_SPINS {
            return invalid(format!(
                "n_range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= {}",
                crate::ladder::MAX_SPINS
            ));
        }
        for (i, (a, b)) in self.dephasing_bounds.iter().enumerate() {
            if !(*a >= 0.0 && a <= b && b.is_finite() && *b > 0.0) {
                return invalid(format!("dephasing_bounds[{i}] = ({a}, {b}) is not a physical interval"));
            }
        }
        let (p, q) = self.polarization_bounds;
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) || p > q {
            return invalid(format!("polarization_bounds ({p}, {q}) must lie in [0, 1]"));
        }
        if let Some((a, b)) = self.tail_window {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return invalid(format!("tail_window ({a}, {b}) is empty"));
            }
        }
        if !(self.isc.0 >= 0.0 && self.isc.1 >= 0.0) {
            return invalid("isc rates must be >= 0");
        }
        if !(self.variance_ratio > 0.0) || !self.variance_ratio.is_finite() {
            return invalid("variance_ratio must be positive");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be positive");
        }
        let f = &self.fixed;
        if let Some(n) = f.n_max {
            if n < lo || n > hi {
                return invalid(format!("fixed n_max {n} lies outside n_range"));
            }
        }
        if f.gamma.is_some_and(|g| !(g > 0.0) || !g.is_finite()) {
            return invalid("fixed gamma must be positive");
        }
        for (i, d) in [f.gamma_d_0, f.gamma_d_1].into_iter().enumerate() {
            if let Some(d) = d {
                let (a, b) = self.dephasing_bounds[i];
                if !(a..=b).contains(&d) {
                    return invalid(format!("fixed dephasing {d} lies outside dephasing_bounds[{i}]"));
                }
            }
        }
        if f.p0.is_some_and(|x| !(p..=q).contains(&x)) {
            return invalid("fixed p0 lies outside polarization_bounds");
        }
        Ok(())
    }
}

/// Outcome of one model fit.
///
/// The collective-model fields (`n_max`, rates, `p0`) are zero for the
/// baseline models, whose parameters live in `parameters`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub n_max: usize,
    pub gamma: f64,
    pub gamma_d_0: f64,
    pub gamma_d_1: f64,
    pub p0: f64,
    /// Final value of the configured loss.
    pub loss: FitLoss,
    pub residual: f64,
    /// Loss at the starting point of the search.
    pub initial_residual: f64,
    /// Sum of squared residuals after background subtraction, whatever the loss.
    pub sum_squares: f64,
    pub parameters: BTreeMap<String, f64>,
    pub per_model_scores: BTreeMap<String, f64>,
    /// Labels of the rows and columns of `covariance_estimate`.
    pub covariance_labels: Vec<String>,
    pub covariance_estimate: Option<DMatrix<f64>>,
    /// Expected counts per bin, background included.
    pub curve: Vec<f64>,
    pub warnings: Vec<String>,
}
