use nalgebra::{DMatrix, DVector};

use super::{check_identification, residual_norm, EstimateResult, Influence, Update};
use crate::basis::BasisSpec;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{EffectForm, EffectModel, IndexFunction, IvModel, OutcomeModel};

/// `e(Z_i,C_i) - E{e(Z,C)|C_i}` under the fitted instrument model.
pub fn centered_index(data: &Dataset, index: &IndexFunction, iv: &IvModel) -> Result<DMatrix<f64>> {
    index.centered(data, Some(iv))
}

/// OLS fit of the outcome model to `Y - m(C;psi0) X` at a preliminary `psi0`.
pub fn preliminary_outcome(
    data: &Dataset,
    effect: &EffectForm,
    outcome_basis: &BasisSpec,
    psi0: &DVector<f64>,
) -> Result<OutcomeModel> {
    OutcomeModel::fit_at(data, outcome_basis, &EffectModel::new(effect.clone(), psi0.clone())?)
}

/// Double-robust G-estimation with the outcome model held fixed.
///
/// Solves `sum_i d_i (Y_i - m_y(C_i) - m(C_i;psi) X_i) = 0` where `d` is the
/// centered index truncated to its first `dim(psi)` components.
pub fn g_estimate(
    data: &Dataset,
    index: &IndexFunction,
    outcome: &OutcomeModel,
    iv: &IvModel,
    effect: &EffectForm,
    update: Update,
    start: Option<&DVector<f64>>,
) -> Result<EstimateResult> {
    let k = effect.dim();
    let full = centered_index(data, index, iv)?;
    if full.ncols() < k {
        return Err(Error::InvalidInput(format!(
            "index has {} components but the effect model has {} parameters",
            full.ncols(),
            k
        )));
    }
    let d = full.columns(0, k).into_owned();
    let xw = effect.exposure_columns(data)?;
    let base = data.y() - outcome.evaluate(data)?;
    let denominator = d.tr_mul(&xw);
    let condition = check_identification(
        &denominator,
        &d,
        &xw,
        "centered index is (nearly) uncorrelated with the exposure",
    )?;
    let numerator = d.tr_mul(&base);
    let lu = denominator.clone().lu();
    let singular = || Error::WeakIdentification {
        context: "singular G-estimation denominator".into(),
        condition,
    };
    let psi = match update {
        Update::FullSolve => lu.solve(&numerator).ok_or_else(singular)?,
        Update::OneStep => {
            let psi0 = start.cloned().unwrap_or_else(|| DVector::zeros(k));
            if psi0.len() != k {
                return Err(Error::InvalidInput(
                    "starting value does not match the effect dimension".into(),
                ));
            }
            let step = lu.solve(&(&numerator - &denominator * &psi0)).ok_or_else(singular)?;
            psi0 + step
        }
    };
    let resid = &base - &xw * &psi;
    let n = data.n();
    let scores = DMatrix::from_fn(n, k, |i, j| d[(i, j)] * resid[i]);

    let mut result = EstimateResult::new(psi, outcome.beta.clone());
    result.nuisance.outcome = Some(outcome.clone());
    result.nuisance.iv = Some(iv.clone());
    result.nuisance.index = Some(index.clone());
    result.diagnostics.denominator_condition = Some(condition);
    result.diagnostics.ee_residual_norm = residual_norm(&scores);
    if full.ncols() > k {
        result.diagnostics.warnings.push(format!(
            "index has {} components; the first {} were used",
            full.ncols(),
            k
        ));
    }
    result.influence = Some(Influence {
        scores,
        jacobian: -denominator / n as f64,
        psi_positions: (0..k).collect(),
    });
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::IvSpec;

    #[test]
    fn wald_ratio_hand_example() {
        let d =
            Dataset::from_columns(&[1.0, 2.0, 5.0, 6.0], &[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0], &[]).unwrap();
        let iv = IvModel::fit(&d, &IvSpec::Empirical).unwrap();
        for beta in [0.0, 3.7] {
            let outcome = OutcomeModel::new(BasisSpec::intercept(), DVector::from_vec(vec![beta])).unwrap();
            let r = g_estimate(
                &d,
                &IndexFunction::RawInstruments,
                &outcome,
                &iv,
                &EffectForm::Constant,
                Update::FullSolve,
                None,
            )
            .unwrap();
            assert_eq!(r.psi_hat[0], 2.0);
        }
    }

    #[test]
    fn irrelevant_index_is_weakly_identified() {
        let d = Dataset::from_columns(&[1.0, 2.0, 5.0, 6.0], &[1.0, 2.0, 3.0, 4.0], &[1.0; 4], &[]).unwrap();
        let iv = IvModel::fit(&d, &IvSpec::Empirical).unwrap();
        let err = g_estimate(
            &d,
            &IndexFunction::RawInstruments,
            &OutcomeModel::zero(),
            &iv,
            &EffectForm::Constant,
            Update::FullSolve,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::WeakIdentification { .. }));
    }
}
