//! Empirical efficiency maximization and bias-reduced nuisance estimation
//! for the constant-effect model `m(C;psi) = psi` with a scalar instrument.
//!
//! The index has the form `e(Z,C;alpha) = (alpha' b(C)) Z`; `b` is the index basis.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{build_design, BasisSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{g_estimate, residual_norm, EstimateResult, Influence, Update};
use crate::glm::{fit_binary, fit_ols, fit_wls, BinaryLink};
use crate::linalg::{
    condition_number, hstack, independent_columns, scale_rows, select_columns, solve_square, WEAK_ID_CONDITION,
};
use crate::models::{scalar_index, EffectForm, IndexFunction, IvModel, IvSpec, OutcomeModel};

/// Tolerance for dropping extension columns already spanned by the base design.
const EXTENSION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EemFit {
    pub alpha_tilde: DVector<f64>,
    pub beta_tilde: DVector<f64>,
    pub objective_value: f64,
    pub preliminary_psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BrVariant {
    BrGamma,
    BrBeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrFit {
    pub variant: BrVariant,
    /// Instrument-model coefficients; for BR-gamma the retained extension coefficients follow the base ones.
    pub gamma_hat: DVector<f64>,
    /// Outcome coefficients; for BR-beta the retained extension coefficients follow the base ones.
    pub beta_hat: DVector<f64>,
    /// Residual of the defining score identity (infinity norm).
    pub score_identity_norm: f64,
    pub alpha_tilde: DVector<f64>,
    /// `e(C_i;alpha)` per row.
    pub index_values: DVector<f64>,
    /// `P(Z=1|C_i)` under the fitted (possibly extended) instrument model.
    pub probabilities: DVector<f64>,
    pub converged: bool,
    pub separation: bool,
}

fn centered_instrument(data: &Dataset, iv: &IvModel) -> Result<DVector<f64>> {
    let z = data.scalar_instrument()?;
    let mean = iv.conditional_mean_z(data)?;
    Ok(z - mean.column(0))
}

/// OLS of `X` on `(Z - E(Z|C)) b(C)`, no intercept.
pub fn eem_fit_alpha(data: &Dataset, iv: &IvModel, index_basis: &BasisSpec) -> Result<DVector<f64>> {
    index_basis.require_covariate_only("index")?;
    let zc = centered_instrument(data, iv)?;
    let design = scale_rows(&build_design(data, index_basis)?, &zc);
    match fit_ols(&design, data.x()) {
        Ok(fit) => Ok(fit.coefficients),
        Err(Error::SingularDesign { condition }) => Err(Error::DegenerateInstrument(format!(
            "centered instrument design is rank deficient (condition {condition:.3e})"
        ))),
        Err(e) => Err(e),
    }
}

/// WLS of `Y - psi X` on the outcome basis with weights `(alpha' b)^2 (Z - E(Z|C))^2`.
pub fn eem_fit_beta(
    data: &Dataset,
    iv: &IvModel,
    alpha: &DVector<f64>,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
    preliminary_psi: f64,
) -> Result<DVector<f64>> {
    outcome_basis.require_covariate_only("outcome")?;
    if outcome_basis.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let weights = eem_weights(data, iv, alpha, index_basis)?;
    let response = data.y() - data.x() * preliminary_psi;
    Ok(fit_wls(&build_design(data, outcome_basis)?, &response, &weights)?.coefficients)
}

fn eem_weights(data: &Dataset, iv: &IvModel, alpha: &DVector<f64>, index_basis: &BasisSpec) -> Result<DVector<f64>> {
    let d = scalar_index(data, index_basis, alpha)?.component_mul(&centered_instrument(data, iv)?);
    Ok(d.map(|v| v * v))
}

/// Empirical variance ratio: `var(d_i eps_i) / (n mean(d_i X_i)^2)`.
pub fn eem_objective(
    data: &Dataset,
    iv: &IvModel,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    psi: f64,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
) -> Result<f64> {
    let n = data.n();
    let d = scalar_index(data, index_basis, alpha)?.component_mul(&centered_instrument(data, iv)?);
    let outcome = OutcomeModel::new(outcome_basis.clone(), beta.clone())?;
    let eps = data.y() - outcome.evaluate(data)? - data.x() * psi;
    let de = d.component_mul(&eps);
    let mean_dx = d.dot(data.x()) / n as f64;
    if mean_dx == 0.0 || !mean_dx.is_finite() {
        return Err(Error::WeakIdentification {
            context: "efficiency objective has a zero denominator".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(sample_variance(&de) / (n as f64 * mean_dx * mean_dx))
}

pub(crate) fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.mean();
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// G-estimator with index `Z` whose linear outcome model is fitted jointly by OLS.
///
/// With `M` the residual-maker of the outcome basis this is
/// `psi = (Z - E(Z|C))' M Y / (Z - E(Z|C))' M X`.
pub fn preliminary_psi(data: &Dataset, iv: &IvModel, outcome_basis: &BasisSpec) -> Result<f64> {
    let zc = centered_instrument(data, iv)?;
    let (my, mx) = if outcome_basis.is_empty() {
        (data.y().clone(), data.x().clone())
    } else {
        let b = build_design(data, outcome_basis)?;
        (fit_ols(&b, data.y())?.residuals, fit_ols(&b, data.x())?.residuals)
    };
    let den = zc.dot(&mx);
    let scale = zc.norm() * mx.norm();
    if !(den.abs() > 1e-10 * scale) {
        return Err(Error::WeakIdentification {
            context: "preliminary G-estimator denominator vanishes".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(zc.dot(&my) / den)
}

/// Empirical efficiency maximization: preliminary `psi`, then `alpha~`, `beta~`,
/// then G-estimation at the index `(alpha~' b) Z` with outcome model `beta~`.
pub fn eem_estimate(
    data: &Dataset,
    iv: &IvModel,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
    update: Update,
) -> Result<(EstimateResult, EemFit)> {
    let psi0 = preliminary_psi(data, iv, outcome_basis)?;
    let alpha = eem_fit_alpha(data, iv, index_basis)?;
    let index = IndexFunction::ScaledInstrument {
        basis: index_basis.clone(),
        alpha: alpha.clone(),
    };
    let (mut result, beta) = match update {
        Update::OneStep => {
            let beta = eem_fit_beta(data, iv, &alpha, index_basis, outcome_basis, psi0)?;
            let outcome = OutcomeModel::new(outcome_basis.clone(), beta.clone())?;
            let start = DVector::from_element(1, psi0);
            let r = g_estimate(
                data,
                &index,
                &outcome,
                iv,
                &EffectForm::Constant,
                Update::OneStep,
                Some(&start),
            )?;
            (r, beta)
        }
        Update::FullSolve => eem_joint_solve(data, iv, &alpha, &index, index_basis, outcome_basis)?,
    };
    let psi = result.psi_hat[0];
    let objective_value = eem_objective(data, iv, &alpha, &beta, psi0, index_basis, outcome_basis)?;
    result.diagnostics.extra.insert("preliminary_psi".into(), psi0);
    result.diagnostics.extra.insert("eem_objective".into(), objective_value);
    result
        .nuisance
        .coefficients
        .insert("index_alpha".into(), alpha.iter().copied().collect());
    let fit = EemFit {
        alpha_tilde: alpha,
        beta_tilde: beta,
        objective_value,
        preliminary_psi: psi0,
    };
    debug_assert!(psi.is_finite());
    Ok((result, fit))
}

/// Solves the weighted outcome equations and the G-estimation equation jointly.
fn eem_joint_solve(
    data: &Dataset,
    iv: &IvModel,
    alpha: &DVector<f64>,
    index: &IndexFunction,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
) -> Result<(EstimateResult, DVector<f64>)> {
    let n = data.n();
    let b = build_design(data, outcome_basis)?;
    let p = b.ncols();
    let d = centered_instrument(data, iv)?.component_mul(&scalar_index(data, index_basis, alpha)?);
    let w = d.map(|v| v * v);
    if w.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let wb = scale_rows(&b, &w);
    let eq = hstack(&[&wb, &DMatrix::from_column_slice(n, 1, d.as_slice())]);
    let regressors = hstack(&[&b, &DMatrix::from_column_slice(n, 1, data.x().as_slice())]);
    let a = eq.tr_mul(&regressors);
    let (theta, condition) =
        solve_square(&a, &eq.tr_mul(data.y()), WEAK_ID_CONDITION).map_err(|_| Error::WeakIdentification {
            context: "joint efficiency-maximization system is singular".into(),
            condition: condition_number(&a),
        })?;
    let beta = theta.rows(0, p).into_owned();
    let psi = theta.rows(p, 1).into_owned();
    let resid = data.y() - &regressors * &theta;
    let scores = DMatrix::from_fn(n, p + 1, |i, j| eq[(i, j)] * resid[i]);
    let mut result = EstimateResult::new(psi, beta.clone());
    result.nuisance.outcome = Some(OutcomeModel::new(outcome_basis.clone(), beta.clone())?);
    result.nuisance.iv = Some(iv.clone());
    result.nuisance.index = Some(index.clone());
    result.diagnostics.denominator_condition = Some(condition);
    result.diagnostics.ee_residual_norm = residual_norm(&scores);
    result.influence = Some(Influence {
        scores,
        jacobian: -a / n as f64,
        psi_positions: vec![p],
    });
    Ok((result, beta))
}

fn extension_columns(base: &DMatrix<f64>, ext: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let combined = hstack(&[base, ext]);
    let kept = independent_columns(&combined, EXTENSION_TOLERANCE);
    let base_kept = kept.iter().filter(|&&j| j < base.ncols()).count();
    if base_kept < base.ncols() {
        return Err(Error::SingularDesign {
            condition: f64::INFINITY,
        });
    }
    let ext_kept: Vec<usize> = kept
        .iter()
        .filter(|&&j| j >= base.ncols())
        .map(|j| j - base.ncols())
        .collect();
    Ok((select_columns(&combined, &kept), ext_kept))
}

/// `||sum_i e_i (Z_i - p_i) B_i||_inf`.
pub fn br_gamma_residual(
    index: &DVector<f64>,
    z: &DVector<f64>,
    p: &DVector<f64>,
    outcome_design: &DMatrix<f64>,
) -> f64 {
    let d = index.component_mul(&(z - p));
    outcome_design.tr_mul(&d).amax()
}

/// `||sum_i e_i eps_i Gamma_i||_inf` with `eps = Y - m_y - psi X` and `A` the instrument-model design.
pub fn br_beta_residual(
    index: &DVector<f64>,
    z: &DVector<f64>,
    p: &DVector<f64>,
    x: &DVector<f64>,
    eps: &DVector<f64>,
    iv_design: &DMatrix<f64>,
) -> f64 {
    let n = z.len() as f64;
    let pq = p.map(|v| v * (1.0 - v));
    let zc = z - p;
    let a = iv_design.tr_mul(&index.component_mul(&pq).component_mul(x)) / n;
    let bs = index.component_mul(&zc).dot(x) / n;
    let mut total = DVector::zeros(iv_design.ncols());
    for i in 0..z.len() {
        let f = index[i] * eps[i];
        let gamma_i = &a * zc[i] - iv_design.row(i).transpose() * (pq[i] * bs);
        total += gamma_i * f;
    }
    total.amax()
}

fn require_binary(data: &Dataset) -> Result<()> {
    if !data.has_binary_instrument() {
        return Err(Error::Unsupported(
            "bias-reduced estimation needs a single binary instrument".into(),
        ));
    }
    Ok(())
}

fn ratio_estimate(d: &DVector<f64>, numerator_base: &DVector<f64>, x: &DVector<f64>) -> Result<(f64, f64)> {
    let den = d.dot(x);
    let dm = DMatrix::from_column_slice(d.len(), 1, d.as_slice());
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let condition = crate::estimators::check_identification(
        &DMatrix::from_element(1, 1, den),
        &dm,
        &xm,
        "bias-reduced index is (nearly) uncorrelated with the exposure",
    )?;
    Ok((d.dot(numerator_base) / den, condition))
}

/// BR-gamma: the instrument model is extended by `e(C;alpha~) B(C)` and fitted by
/// maximum likelihood, which zeroes the gradient in `beta`; `beta` then drops out.
pub fn br_gamma_estimate(
    data: &Dataset,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
    iv_basis: &BasisSpec,
) -> Result<(EstimateResult, BrFit)> {
    br_gamma_with_outcome(data, index_basis, outcome_basis, iv_basis, None)
}

/// BR-gamma with an explicit outcome model in the final equation; `psi` does not
/// depend on `beta` because the fitted instrument model annihilates the outcome basis.
pub fn br_gamma_with_outcome(
    data: &Dataset,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
    iv_basis: &BasisSpec,
    beta: Option<&DVector<f64>>,
) -> Result<(EstimateResult, BrFit)> {
    require_binary(data)?;
    outcome_basis.require_covariate_only("outcome")?;
    let z = data.scalar_instrument()?;
    let base = build_design(data, iv_basis)?;
    let plain = IvModel::fit(data, &IvSpec::Logistic(iv_basis.clone()))?;
    let alpha = eem_fit_alpha(data, &plain, index_basis)?;
    let e = scalar_index(data, index_basis, &alpha)?;
    let b = build_design(data, outcome_basis)?;
    let (design, ext_kept) = extension_columns(&base, &scale_rows(&b, &e))?;
    let fit = fit_binary(&design, &z, BinaryLink::Logit)?;
    let p = fit.fitted_probabilities(&design);
    let d = e.component_mul(&(&z - &p));
    let mut numerator_base = data.y().clone();
    if let Some(beta) = beta {
        numerator_base -= OutcomeModel::new(outcome_basis.clone(), beta.clone())?.evaluate(data)?;
    }
    let (psi, condition) = ratio_estimate(&d, &numerator_base, data.x())?;
    let residual = br_gamma_residual(&e, &z, &p, &b);

    let n = data.n();
    let resid = &numerator_base - data.x() * psi;
    let scores = DMatrix::from_fn(n, 1, |i, _| d[i] * resid[i]);
    let mean_dx = d.dot(data.x()) / n as f64;
    let mut result = EstimateResult::new(DVector::from_element(1, psi), DVector::zeros(0));
    result.diagnostics.converged = fit.converged;
    if !fit.converged {
        result.diagnostics.warnings.push(format!(
            "extended instrument model did not converge (score norm {:.3e})",
            fit.score_norm
        ));
    }
    if fit.separation {
        result
            .diagnostics
            .warnings
            .push("extended instrument model shows signs of separation".into());
    }
    result.diagnostics.denominator_condition = Some(condition);
    result.diagnostics.ee_residual_norm = residual_norm(&scores);
    result.diagnostics.extra.insert("br_gamma_residual".into(), residual);
    result
        .nuisance
        .coefficients
        .insert("index_alpha".into(), alpha.iter().copied().collect());
    result
        .nuisance
        .coefficients
        .insert("iv_gamma_extended".into(), fit.coefficients.iter().copied().collect());
    result.influence = Some(Influence {
        scores,
        jacobian: DMatrix::from_element(1, 1, -mean_dx),
        psi_positions: vec![0],
    });
    let brfit = BrFit {
        variant: BrVariant::BrGamma,
        gamma_hat: fit.coefficients.clone(),
        beta_hat: beta.cloned().unwrap_or_else(|| DVector::zeros(0)),
        score_identity_norm: residual,
        alpha_tilde: alpha,
        index_values: e,
        probabilities: p,
        converged: fit.converged,
        separation: fit.separation,
    };
    result.se = Some(DVector::from_element(
        1,
        crate::inference::conservative_se_brgamma(data, &brfit, psi),
    ));
    if !ext_kept.is_empty() {
        result
            .diagnostics
            .extra
            .insert("extension_columns".into(), ext_kept.len() as f64);
    }
    Ok((result, brfit))
}

/// BR-beta: plain maximum-likelihood instrument model; the outcome model is
/// extended by `e(C;alpha~) p(1-p) A(C)` and fitted jointly with the `psi` equation.
pub fn br_beta_estimate(
    data: &Dataset,
    index_basis: &BasisSpec,
    outcome_basis: &BasisSpec,
    iv_basis: &BasisSpec,
) -> Result<(EstimateResult, BrFit)> {
    require_binary(data)?;
    outcome_basis.require_covariate_only("outcome")?;
    let n = data.n();
    let z = data.scalar_instrument()?;
    let iv = IvModel::fit(data, &IvSpec::Logistic(iv_basis.clone()))?;
    let p = iv.probability(data)?;
    let alpha = eem_fit_alpha(data, &iv, index_basis)?;
    let e = scalar_index(data, index_basis, &alpha)?;
    let a_design = build_design(data, iv_basis)?;
    let b = build_design(data, outcome_basis)?;
    let factor = e.component_mul(&p.map(|v| v * (1.0 - v)));
    let (design, ext_kept) = extension_columns(&b, &scale_rows(&a_design, &factor))?;
    let m = design.ncols();
    let d = e.component_mul(&(&z - &p));

    // [D'D  D'X; d'D  d'X] (beta, psi) = [D'Y; d'Y]
    let eqs = hstack(&[&design, &DMatrix::from_column_slice(n, 1, d.as_slice())]);
    let regressors = hstack(&[&design, &DMatrix::from_column_slice(n, 1, data.x().as_slice())]);
    let a = eqs.tr_mul(&regressors);
    let rhs = eqs.tr_mul(data.y());
    let dm = DMatrix::from_column_slice(n, 1, d.as_slice());
    let xm = DMatrix::from_column_slice(n, 1, data.x().as_slice());
    crate::estimators::check_identification(
        &DMatrix::from_element(1, 1, d.dot(data.x())),
        &dm,
        &xm,
        "bias-reduced index is (nearly) uncorrelated with the exposure",
    )?;
    let (theta, condition) = solve_square(&a, &rhs, WEAK_ID_CONDITION).map_err(|_| Error::WeakIdentification {
        context: "joint bias-reduced system is singular".into(),
        condition: condition_number(&a),
    })?;
    let beta = theta.rows(0, m).into_owned();
    let psi = theta[m];
    let eps = data.y() - &regressors * &theta;
    let residual = br_beta_residual(&e, &z, &p, data.x(), &eps, &a_design);
    let scores = DMatrix::from_fn(n, m + 1, |i, j| eqs[(i, j)] * eps[i]);

    let mut result = EstimateResult::new(DVector::from_element(1, psi), beta.clone());
    result.diagnostics.denominator_condition = Some(condition);
    result.diagnostics.ee_residual_norm = residual_norm(&scores);
    result.diagnostics.extra.insert("br_beta_residual".into(), residual);
    result.nuisance.iv = Some(iv.clone());
    result
        .nuisance
        .coefficients
        .insert("index_alpha".into(), alpha.iter().copied().collect());
    result
        .nuisance
        .coefficients
        .insert("outcome_beta_extended".into(), beta.iter().copied().collect());
    result.influence = Some(Influence {
        scores,
        jacobian: -a / n as f64,
        psi_positions: vec![m],
    });
    if !ext_kept.is_empty() {
        result
            .diagnostics
            .extra
            .insert("extension_columns".into(), ext_kept.len() as f64);
    }
    let brfit = BrFit {
        variant: BrVariant::BrBeta,
        gamma_hat: DVector::from_vec(iv.coefficients()),
        beta_hat: beta,
        score_identity_norm: residual,
        alpha_tilde: alpha,
        index_values: e,
        probabilities: p,
        converged: true,
        separation: false,
    };
    Ok((result, brfit))
}
