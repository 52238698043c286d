//! Monte Carlo harness: replicate datasets from split seeds, run every
//! estimator, and summarize bias and spread after removing severe outliers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::Generator;
use crate::error::{Error, Result};
use crate::inference::quantile_sorted;
use crate::registry::NamedEstimator;
use crate::rng::replicate_seed;

/// Replicates whose estimate lies this many IQRs from the median are severe outliers.
pub const OUTLIER_IQR_MULTIPLE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
    pub reps: usize,
}

impl ScenarioConfig {
    pub fn new(generator: Generator, n: usize, seed: u64, reps: usize) -> Self {
        Self {
            generator,
            n,
            seed,
            reps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.n < 50 {
            return Err(Error::InvalidInput(format!(
                "scenario sample size must be at least 50, got {}",
                self.n
            )));
        }
        if self.reps < 2 {
            return Err(Error::InvalidInput(
                "a Monte Carlo run needs at least 2 replicates".into(),
            ));
        }
        Ok(())
    }
}

/// Summary for one estimator component within one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub scenario: String,
    pub estimator: String,
    /// Index into `psi`.
    pub component: usize,
    pub truth: f64,
    /// Mean minus truth over retained replicates.
    pub bias: Option<f64>,
    /// Sample standard deviation over retained replicates.
    pub sd: Option<f64>,
    /// `sd / sqrt(used)`.
    pub mc_se: Option<f64>,
    /// Bias and SD over every successful replicate, outliers included.
    pub raw_bias: Option<f64>,
    pub raw_sd: Option<f64>,
    pub outliers_removed: usize,
    pub failed: usize,
    pub used: usize,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    /// More than half the replicates failed.
    pub scenario_failure: bool,
    /// Estimate per replicate; `None` where the estimator failed.
    #[serde(skip)]
    pub estimates: Vec<Option<f64>>,
    /// Error kind per failed replicate, in replicate order.
    #[serde(skip)]
    pub failure_kinds: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub scenario: ScenarioConfig,
    pub rows: Vec<EstimatorSummary>,
}

impl MonteCarloReport {
    pub fn row(&self, estimator: &str, component: usize) -> Option<&EstimatorSummary> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.component == component)
    }
}

/// Runs every estimator on `reps` datasets. Replicate `i` uses a seed derived
/// from `(scenario.seed, i)` only, and results are aggregated in replicate
/// order, so the report is independent of the thread count.
pub fn run_monte_carlo(scenario: &ScenarioConfig, estimators: &[NamedEstimator]) -> Result<MonteCarloReport> {
    scenario.validate()?;
    let truth = scenario.generator.psi_true();
    let k = truth.len();
    let outcomes: Vec<Vec<std::result::Result<Vec<f64>, String>>> = (0..scenario.reps)
        .into_par_iter()
        .map(|i| {
            let data = scenario
                .generator
                .generate(scenario.n, replicate_seed(scenario.seed, i as u64));
            estimators
                .iter()
                .map(|e| match &data {
                    Err(err) => Err(err.kind().to_string()),
                    Ok(sim) => match e.estimator.psi(&sim.dataset) {
                        Ok(psi) if psi.len() == k && psi.iter().all(|v| v.is_finite()) => {
                            Ok(psi.iter().copied().collect())
                        }
                        Ok(_) => Err("invalid_estimate".to_string()),
                        Err(err) => Err(err.kind().to_string()),
                    },
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(estimators.len() * k);
    for (j, est) in estimators.iter().enumerate() {
        for c in 0..k {
            let estimates: Vec<Option<f64>> = outcomes.iter().map(|rep| rep[j].as_ref().ok().map(|v| v[c])).collect();
            let failure_kinds = outcomes
                .iter()
                .enumerate()
                .filter_map(|(i, rep)| rep[j].as_ref().err().map(|k| (i, k.clone())))
                .collect();
            rows.push(summarize(scenario, &est.label, c, truth[c], estimates, failure_kinds));
        }
    }
    Ok(MonteCarloReport {
        scenario: *scenario,
        rows,
    })
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    (Some(mean), sd)
}

/// Splits estimates into retained values and the count of severe outliers.
pub fn remove_outliers(values: &[f64]) -> (Vec<f64>, usize) {
    if values.len() < 4 {
        return (values.to_vec(), 0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let limit = OUTLIER_IQR_MULTIPLE * iqr;
    let kept: Vec<f64> = values.iter().copied().filter(|v| (v - median).abs() <= limit).collect();
    let removed = values.len() - kept.len();
    (kept, removed)
}

fn summarize(
    scenario: &ScenarioConfig,
    label: &str,
    component: usize,
    truth: f64,
    estimates: Vec<Option<f64>>,
    failure_kinds: Vec<(usize, String)>,
) -> EstimatorSummary {
    let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
    let failed = estimates.len() - ok.len();
    let (raw_mean, raw_sd) = mean_sd(&ok);
    let (kept, outliers_removed) = remove_outliers(&ok);
    let (mean, sd) = mean_sd(&kept);
    let used = kept.len();
    EstimatorSummary {
        scenario: scenario.generator.label(),
        estimator: label.to_string(),
        component,
        truth,
        bias: mean.map(|m| m - truth),
        sd,
        mc_se: sd.map(|s| s / (used as f64).sqrt()),
        raw_bias: raw_mean.map(|m| m - truth),
        raw_sd,
        outliers_removed,
        failed,
        used,
        reps: scenario.reps,
        n: scenario.n,
        seed: scenario.seed,
        scenario_failure: failed * 2 > scenario.reps,
        estimates,
        failure_kinds,
    }
}
