//! The estimator lattice: Standard TSLS, plug-in two-stage, the locally
//! efficient estimator under an outcome model, and double-robust G-estimation.

mod gest;
mod local_y;
mod tsls;
mod two_stage;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use gest::{centered_index, g_estimate, preliminary_outcome};
pub use local_y::locally_efficient_y;
pub use tsls::standard_tsls;
pub use two_stage::plug_in_two_stage;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, WEAK_ID_CONDITION};
use crate::models::{ExposureModel, IndexFunction, IvModel, OutcomeModel};

/// How an estimating equation that is linear in its parameters is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Update {
    /// A single Newton step from a starting value.
    #[default]
    OneStep,
    /// Solve to the exact root.
    FullSolve,
}

/// Summary of one implied first-stage regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstStage {
    pub regressor: String,
    pub r_squared: f64,
    /// F statistic for the excluded instruments; absent when the restricted fit fails.
    pub partial_f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Condition number of the matrix multiplying `psi` in the final solve.
    pub denominator_condition: Option<f64>,
    /// Infinity norm of the summed estimating functions, relative to their row-norm scale.
    pub ee_residual_norm: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub first_stage: Vec<FirstStage>,
    /// Method-specific scalar diagnostics.
    pub extra: BTreeMap<String, f64>,
}

/// Per-observation estimating functions and their mean Jacobian for the stacked system.
#[derive(Debug, Clone, PartialEq)]
pub struct Influence {
    /// `n x k`: row `i` is `U_i` at the solution.
    pub scores: DMatrix<f64>,
    /// `k x k` mean derivative of `U_i` with respect to the stacked parameters.
    pub jacobian: DMatrix<f64>,
    /// Positions of `psi` within the stacked parameter vector.
    pub psi_positions: Vec<usize>,
}

/// Fitted working models used by an estimator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Nuisance {
    pub exposure: Option<ExposureModel>,
    pub iv: Option<IvModel>,
    pub outcome: Option<OutcomeModel>,
    pub index: Option<IndexFunction>,
    /// Named coefficient vectors fitted by the estimator itself (index weights, extensions).
    pub coefficients: BTreeMap<String, Vec<f64>>,
}

impl Nuisance {
    /// All fitted coefficients by name.
    pub fn summary(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = self.coefficients.clone();
        if let Some(e) = &self.exposure {
            out.insert("exposure_alpha".into(), e.alpha.iter().copied().collect());
        }
        if let Some(iv) = &self.iv {
            out.insert("iv_gamma".into(), iv.coefficients());
        }
        if let Some(o) = &self.outcome {
            out.insert("outcome_beta".into(), o.beta.iter().copied().collect());
        }
        if let Some(IndexFunction::ScaledInstrument { alpha, .. }) = &self.index {
            out.insert("index_alpha".into(), alpha.iter().copied().collect());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub psi_hat: DVector<f64>,
    /// Outcome-model coefficients; empty when the estimator has none.
    pub beta_hat: DVector<f64>,
    pub nuisance: Nuisance,
    pub se: Option<DVector<f64>>,
    pub ci: Option<(DVector<f64>, DVector<f64>)>,
    pub diagnostics: Diagnostics,
    pub influence: Option<Influence>,
}

impl EstimateResult {
    pub(crate) fn new(psi_hat: DVector<f64>, beta_hat: DVector<f64>) -> Self {
        Self {
            psi_hat,
            beta_hat,
            nuisance: Nuisance::default(),
            se: None,
            ci: None,
            diagnostics: Diagnostics {
                converged: true,
                ..Diagnostics::default()
            },
            influence: None,
        }
    }
}

/// Relative size of the summed estimating functions.
pub(crate) fn residual_norm(scores: &DMatrix<f64>) -> f64 {
    let total = scores.row_sum();
    let scale: f64 = scores.row_iter().map(|r| r.amax()).sum();
    if scale == 0.0 {
        0.0
    } else {
        total.amax() / scale
    }
}

/// Rejects a `psi` denominator that is singular, badly conditioned, or
/// negligible relative to the size of its factors.
pub(crate) fn check_identification(
    denominator: &DMatrix<f64>,
    index: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
    context: &str,
) -> Result<f64> {
    let n = index.nrows().max(1) as f64;
    let condition = condition_number(denominator);
    let index_scale = (index.norm_squared() / n).sqrt();
    let regressor_scale = (regressors.norm_squared() / n).sqrt();
    let largest = denominator.clone().singular_values().max() / n;
    let negligible = largest <= 1e-10 * index_scale * regressor_scale;
    if !(condition <= WEAK_ID_CONDITION) || negligible || !largest.is_finite() {
        return Err(Error::WeakIdentification {
            context: context.to_string(),
            condition,
        });
    }
    Ok(condition)
}
