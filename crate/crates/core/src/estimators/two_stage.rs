use nalgebra::DMatrix;

use super::{residual_norm, EstimateResult, Influence};
use crate::basis::{build_design, BasisSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::fit_ols;
use crate::linalg::{hstack, scale_rows};
use crate::models::{EffectForm, ExposureLink, ExposureModel, ExposureSpec, OutcomeModel};

/// Plug-in two-stage estimation: fit `m_x`, then regress `Y` on the outcome
/// basis and `m_x(Z,C;alpha) * W(C)`.
pub fn plug_in_two_stage(
    data: &Dataset,
    exposure: &ExposureSpec,
    effect: &EffectForm,
    outcome_basis: &BasisSpec,
) -> Result<EstimateResult> {
    outcome_basis.require_covariate_only("outcome")?;
    let model = ExposureModel::fit(data, exposure)?;
    let n = data.n();
    let f = build_design(data, &model.basis)?;
    let eta = &f * &model.alpha;
    let mu = model.predict(data)?;
    let w = effect.derivative(data)?;
    let b = build_design(data, outcome_basis)?;
    let plug = scale_rows(&w, &mu);
    let second = hstack(&[&b, &plug]);
    let fit = fit_ols(&second, data.y()).map_err(|e| match e {
        Error::SingularDesign { condition } => Error::WeakIdentification {
            context: "plug-in exposure columns are collinear with the outcome basis".into(),
            condition,
        },
        other => other,
    })?;
    let p = b.ncols();
    let k = w.ncols();
    let theta = fit.coefficients;
    let beta = theta.rows(0, p).into_owned();
    let psi = theta.rows(p, k).into_owned();

    // Stacked system (alpha, beta, psi): the first-stage score followed by the
    // second-stage normal equations with m_x evaluated at alpha.
    let a = f.ncols();
    let dim = a + p + k;
    let mut scores = DMatrix::zeros(n, dim);
    let mut jacobian = DMatrix::zeros(dim, dim);
    let resid = &fit.residuals;
    for i in 0..n {
        let fi = f.row(i).transpose();
        let d = model.link_derivative(eta[i]);
        let (s_factor, info) = match model.link {
            ExposureLink::Identity => (data.x()[i] - eta[i], 1.0),
            ExposureLink::Logit => (data.x()[i] - mu[i], d),
            ExposureLink::Probit => {
                let v = (mu[i] * (1.0 - mu[i])).max(1e-300);
                ((data.x()[i] - mu[i]) * d / v, d * d / v)
            }
        };
        for r in 0..a {
            scores[(i, r)] = fi[r] * s_factor;
            for c in 0..a {
                jacobian[(r, c)] -= info * fi[r] * fi[c];
            }
        }
        let gi = second.row(i).transpose();
        let effect_i: f64 = (0..k).map(|j| w[(i, j)] * psi[j]).sum();
        for r in 0..p + k {
            scores[(i, a + r)] = gi[r] * resid[i];
            for c in 0..p + k {
                jacobian[(a + r, a + c)] -= gi[r] * gi[c];
            }
            let dg = if r >= p { w[(i, r - p)] * d } else { 0.0 };
            for c in 0..a {
                jacobian[(a + r, c)] += (dg * resid[i] - gi[r] * effect_i * d) * fi[c];
            }
        }
    }
    jacobian /= n as f64;

    let mut result = EstimateResult::new(psi, beta.clone());
    result.nuisance.outcome = Some(OutcomeModel::new(outcome_basis.clone(), beta)?);
    result.diagnostics.converged = model.converged;
    result.nuisance.exposure = Some(model);
    result.diagnostics.denominator_condition = Some(fit.condition);
    result.diagnostics.ee_residual_norm = residual_norm(&scores.columns(a, p + k).into_owned());
    result.influence = Some(Influence {
        scores,
        jacobian,
        psi_positions: (a + p..dim).collect(),
    });
    Ok(result)
}
