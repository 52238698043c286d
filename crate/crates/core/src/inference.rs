//! Standard errors and confidence intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::adaptive::BrFit;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{EstimateResult, Influence};
use crate::glm::normal_quantile;
use crate::rng::{Domain, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InferenceMethod {
    Sandwich,
    ConservativeIf,
    Bootstrap { resamples: usize, seed: u64, failed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub method: InferenceMethod,
    pub level: f64,
}

/// `sqrt(diag(J^-1 (1/n^2) sum U_i U_i' J^-T))`.
pub fn sandwich_se(scores: &DMatrix<f64>, jacobian: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = scores.nrows() as f64;
    let k = jacobian.nrows();
    if jacobian.ncols() != k || scores.ncols() != k {
        return Err(Error::InvalidInput(
            "estimating functions and jacobian dimensions differ".into(),
        ));
    }
    let inv = jacobian
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularDesign {
            condition: f64::INFINITY,
        })?;
    let meat = scores.tr_mul(scores) / (n * n);
    let cov = &inv * meat * inv.transpose();
    Ok(DVector::from_fn(k, |i, _| cov[(i, i)].max(0.0).sqrt()))
}

/// Sandwich standard errors for the `psi` components of an influence system.
pub fn psi_sandwich_se(influence: &Influence) -> Result<DVector<f64>> {
    let all = sandwich_se(&influence.scores, &influence.jacobian)?;
    Ok(DVector::from_iterator(
        influence.psi_positions.len(),
        influence.psi_positions.iter().map(|&j| all[j]),
    ))
}

/// Fills `se` from the influence system and a Wald interval at `level`.
pub fn attach_sandwich(result: &mut EstimateResult, level: f64) -> Result<()> {
    if result.se.is_none() {
        let influence = result
            .influence
            .as_ref()
            .ok_or_else(|| Error::Unsupported("estimator provides no estimating functions".into()))?;
        result.se = Some(psi_sandwich_se(influence)?);
    }
    let se = result.se.clone().expect("se set above");
    let zq = normal_quantile(0.5 + level / 2.0);
    result.ci = Some((&result.psi_hat - &se * zq, &result.psi_hat + &se * zq));
    Ok(())
}

/// `1/sqrt(n)` times the sample standard deviation of `U_i = d_i (Y_i - psi X_i) / mean(d X)`,
/// ignoring estimation of the instrument model.
pub fn conservative_se_brgamma(data: &Dataset, fit: &BrFit, psi: f64) -> f64 {
    let n = data.n();
    let z = data.z().column(0);
    let d = DVector::from_fn(n, |i, _| fit.index_values[i] * (z[i] - fit.probabilities[i]));
    let mean_dx = d.dot(data.x()) / n as f64;
    let u = DVector::from_fn(n, |i, _| d[i] * (data.y()[i] - psi * data.x()[i]) / mean_dx);
    (crate::adaptive::sample_variance(&u) / n as f64).sqrt()
}

/// Options for [`bootstrap_ci_with`].
#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Every resample is the original data in order (sanity hook).
    pub identity_resampling: bool,
}

/// Nonparametric row bootstrap with percentile intervals.
pub fn bootstrap_ci<F>(data: &Dataset, estimator: F, resamples: usize, level: f64, seed: u64) -> Result<InferenceResult>
where
    F: Fn(&Dataset) -> Result<DVector<f64>> + Sync,
{
    bootstrap_ci_with(
        data,
        estimator,
        BootstrapOptions {
            resamples,
            level,
            seed,
            identity_resampling: false,
        },
    )
}

pub fn bootstrap_ci_with<F>(data: &Dataset, estimator: F, options: BootstrapOptions) -> Result<InferenceResult>
where
    F: Fn(&Dataset) -> Result<DVector<f64>> + Sync,
{
    if options.resamples < 100 {
        return Err(Error::InvalidInput("the bootstrap needs at least 100 resamples".into()));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::InvalidInput("confidence level must lie in (0,1)".into()));
    }
    let n = data.n();
    let draws: Vec<Option<DVector<f64>>> = (0..options.resamples)
        .into_par_iter()
        .map(|b| {
            let rows: Vec<usize> = if options.identity_resampling {
                (0..n).collect()
            } else {
                let mut rng = StreamRng::new(options.seed, Domain::Bootstrap, b as u64);
                (0..n).map(|_| rng.index(n)).collect()
            };
            estimator(&data.select_rows(&rows)).ok()
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 5 > options.resamples {
        return Err(Error::UnreliableBootstrap {
            failed,
            total: options.resamples,
        });
    }
    let ok: Vec<DVector<f64>> = draws.into_iter().flatten().collect();
    let k = ok[0].len();
    let mut se = Vec::with_capacity(k);
    let mut lower = Vec::with_capacity(k);
    let mut upper = Vec::with_capacity(k);
    for j in 0..k {
        let mut values: Vec<f64> = ok.iter().map(|v| v[j]).collect();
        values.sort_by(f64::total_cmp);
        let col = DVector::from_vec(values.clone());
        se.push(crate::adaptive::sample_variance(&col).sqrt());
        lower.push(quantile_sorted(&values, (1.0 - options.level) / 2.0));
        upper.push(quantile_sorted(&values, (1.0 + options.level) / 2.0));
    }
    Ok(InferenceResult {
        se,
        ci_lower: lower,
        ci_upper: upper,
        method: InferenceMethod::Bootstrap {
            resamples: options.resamples,
            seed: options.seed,
            failed,
        },
        level: options.level,
    })
}

/// Linear-interpolation quantile of sorted values (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
