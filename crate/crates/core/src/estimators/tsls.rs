use nalgebra::{DMatrix, DVector};

use super::{residual_norm, EstimateResult, FirstStage, Influence};
use crate::basis::{build_design, BasisSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::fit_ols;
use crate::linalg::{hstack, WEAK_ID_CONDITION};
use crate::models::{EffectForm, OutcomeModel};

/// Standard two-stage least squares with the implied first stage.
///
/// Each endogenous regressor `X * W_k(C)` is projected on the instrument
/// columns together with every outcome-basis column; the second stage
/// regresses `Y` on the outcome basis and the projected regressors.
pub fn standard_tsls(
    data: &Dataset,
    effect: &EffectForm,
    outcome_basis: &BasisSpec,
    instruments: &BasisSpec,
) -> Result<EstimateResult> {
    outcome_basis.require_covariate_only("outcome")?;
    let k = effect.dim();
    if instruments.len() < k {
        return Err(Error::InvalidInput(format!(
            "order condition fails: {} instrument columns for {} effect parameters",
            instruments.len(),
            k
        )));
    }
    let zi = build_design(data, instruments)?;
    let b = build_design(data, outcome_basis)?;
    let first = hstack(&[&zi, &b]);
    let endog = effect.exposure_columns(data)?;
    let n = data.n();
    let p = b.ncols();

    let mut fitted = DMatrix::zeros(n, k);
    let mut first_stage = Vec::with_capacity(k);
    for j in 0..k {
        let target = endog.column(j).into_owned();
        let fit = fit_ols(&first, &target)?;
        fitted.set_column(j, &fit.fitted);
        first_stage.push(first_stage_summary(
            &b,
            &target,
            &fit.residuals,
            instruments.len(),
            first.ncols(),
            regressor_label(data, effect, j),
        ));
    }

    let second = hstack(&[&b, &fitted]);
    let fit = fit_ols(&second, data.y()).map_err(|e| match e {
        Error::SingularDesign { condition } => Error::WeakIdentification {
            context: "fitted endogenous regressors are collinear with the outcome basis".into(),
            condition,
        },
        other => other,
    })?;
    if !(fit.condition <= WEAK_ID_CONDITION) {
        return Err(Error::WeakIdentification {
            context: "fitted endogenous regressors are collinear with the outcome basis".into(),
            condition: fit.condition,
        });
    }
    let theta = fit.coefficients;
    let beta = theta.rows(0, p).into_owned();
    let psi = theta.rows(p, k).into_owned();

    let regressors = hstack(&[&b, &endog]);
    let resid = data.y() - &regressors * &theta;
    let scores = DMatrix::from_fn(n, p + k, |i, j| second[(i, j)] * resid[i]);
    let jacobian = -(second.tr_mul(&regressors)) / n as f64;

    let mut result = EstimateResult::new(psi, beta.clone());
    result.nuisance.outcome = Some(OutcomeModel::new(outcome_basis.clone(), beta)?);
    result.diagnostics.denominator_condition = Some(fit.condition);
    result.diagnostics.ee_residual_norm = residual_norm(&scores);
    result.diagnostics.first_stage = first_stage;
    if k > 1 {
        result.diagnostics.warnings.push(
            "implied first stages for the effect-modifier regressors were fitted independently and may be mutually incompatible"
                .into(),
        );
    }
    result.influence = Some(Influence {
        scores,
        jacobian,
        psi_positions: (p..p + k).collect(),
    });
    Ok(result)
}

fn regressor_label(data: &Dataset, effect: &EffectForm, j: usize) -> String {
    let x = data.names().x.clone();
    match effect {
        EffectForm::Constant => x,
        EffectForm::Linear(b) => match &b.terms[j] {
            crate::basis::Term::Intercept => x,
            t => format!("{x}*{}", t.label(data.names())),
        },
    }
}

fn first_stage_summary(
    restricted: &DMatrix<f64>,
    target: &DVector<f64>,
    residuals: &DVector<f64>,
    excluded: usize,
    columns: usize,
    regressor: String,
) -> FirstStage {
    let n = target.len();
    let rss = residuals.norm_squared();
    let mean = target.mean();
    let tss: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    let rss_restricted = if restricted.ncols() == 0 {
        Some(target.norm_squared())
    } else {
        fit_ols(restricted, target).ok().map(|f| f.residuals.norm_squared())
    };
    let dof = n as f64 - columns as f64;
    let partial_f = rss_restricted
        .filter(|_| dof > 0.0 && rss > 0.0)
        .map(|r| ((r - rss) / excluded as f64) / (rss / dof));
    FirstStage {
        regressor,
        r_squared,
        partial_f,
    }
}
