use nalgebra::{DMatrix, DVector};

use super::{residual_norm, EstimateResult, Influence, Update};
use crate::basis::{build_design, BasisSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, hstack, independent_columns, scale_rows, solve_square, WEAK_ID_CONDITION};
use crate::models::{EffectForm, ExposureModel, OutcomeModel};

/// Locally efficient estimation under the outcome model with a fitted exposure model.
///
/// Solves `sum_i e_i (Y_i - beta' B_i - m(C_i;psi) X_i) = 0` with the index
/// `e_i = (B_i ; m_x(Z_i,C_i) W_i)`, linear in `(beta, psi)`.
/// `start` holds `(beta, psi)` or just `psi` for the one-step update.
pub fn locally_efficient_y(
    data: &Dataset,
    exposure: &ExposureModel,
    effect: &EffectForm,
    outcome_basis: &BasisSpec,
    update: Update,
    start: Option<&DVector<f64>>,
) -> Result<EstimateResult> {
    outcome_basis.require_covariate_only("outcome")?;
    let n = data.n();
    let b = build_design(data, outcome_basis)?;
    let w = effect.derivative(data)?;
    let mx = exposure.predict(data)?;
    let index = hstack(&[&b, &scale_rows(&w, &mx)]);
    let regressors = hstack(&[&b, &scale_rows(&w, data.x())]);
    let p = b.ncols();
    let k = w.ncols();

    let a = index.tr_mul(&regressors);
    let rhs = index.tr_mul(data.y());
    let theta = match solve_square(&a, &rhs, WEAK_ID_CONDITION) {
        Ok((theta, _)) => theta,
        Err(_) => return Err(collinear_index_error(data, outcome_basis, effect, &index, &a)),
    };
    let theta = match update {
        Update::FullSolve => theta,
        Update::OneStep => {
            let start = expand_start(start, p, k)?;
            // The equation is linear, so one Newton step lands on the root.
            let step = a
                .clone()
                .lu()
                .solve(&(&rhs - &a * &start))
                .ok_or(Error::SingularDesign {
                    condition: f64::INFINITY,
                })?;
            start + step
        }
    };
    let beta = theta.rows(0, p).into_owned();
    let psi = theta.rows(p, k).into_owned();
    let resid = data.y() - &regressors * &theta;
    let scores = DMatrix::from_fn(n, p + k, |i, j| index[(i, j)] * resid[i]);
    let jacobian = -&a / n as f64;

    let mut result = EstimateResult::new(psi, beta.clone());
    result.nuisance.outcome = Some(OutcomeModel::new(outcome_basis.clone(), beta)?);
    result.nuisance.exposure = Some(exposure.clone());
    result.diagnostics.denominator_condition = Some(condition_number(&a));
    result.diagnostics.ee_residual_norm = residual_norm(&scores);
    result.influence = Some(Influence {
        scores,
        jacobian,
        psi_positions: (p..p + k).collect(),
    });
    Ok(result)
}

pub(crate) fn expand_start(start: Option<&DVector<f64>>, p: usize, k: usize) -> Result<DVector<f64>> {
    match start {
        None => Ok(DVector::zeros(p + k)),
        Some(s) if s.len() == p + k => Ok(s.clone()),
        Some(s) if s.len() == k => {
            let mut out = DVector::zeros(p + k);
            out.rows_mut(p, k).copy_from(s);
            Ok(out)
        }
        Some(s) => Err(Error::InvalidInput(format!(
            "starting value has length {}, expected {} or {}",
            s.len(),
            k,
            p + k
        ))),
    }
}

fn collinear_index_error(
    data: &Dataset,
    outcome_basis: &BasisSpec,
    effect: &EffectForm,
    index: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Error {
    let kept = independent_columns(index, 1e-8);
    let mut labels: Vec<String> = outcome_basis.terms.iter().map(|t| t.label(data.names())).collect();
    match effect {
        EffectForm::Constant => labels.push(format!("m_x[{}]", data.names().x)),
        EffectForm::Linear(wb) => {
            labels.extend(wb.terms.iter().map(|t| format!("m_x*{}", t.label(data.names()))));
        }
    }
    let dropped: Vec<String> = (0..index.ncols())
        .filter(|j| !kept.contains(j))
        .map(|j| labels[j].clone())
        .collect();
    let context = if dropped.is_empty() {
        "locally efficient system is singular".to_string()
    } else {
        format!("index components are collinear: {}", dropped.join(", "))
    };
    Error::WeakIdentification {
        context,
        condition: condition_number(a),
    }
}
