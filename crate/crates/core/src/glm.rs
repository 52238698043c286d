//! Nuisance-model fitters: ordinary and weighted least squares, and
//! maximum-likelihood binary regression with logit or probit link.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, qr_least_squares, scale_rows};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / SQRT_2)
}

pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal quantile, polished by one Newton step on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile needs p in (0,1), got {p}");
    let u = -SQRT_2 * erfc_inv(2.0 * p);
    let density = normal_pdf(u);
    if density > 1e-300 {
        u - (normal_cdf(u) - p) / density
    } else {
        u
    }
}

pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Result of a (weighted) least-squares fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Inverse of the (weighted) cross-product of the design.
    pub gram_inverse: DMatrix<f64>,
    pub condition: f64,
}

pub fn fit_ols(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<LinearFit> {
    check_response(design, response)?;
    let solved = qr_least_squares(design, response)?;
    let fitted = design * &solved.coefficients;
    let residuals = response - &fitted;
    Ok(LinearFit {
        gram_inverse: &solved.r_inverse * solved.r_inverse.transpose(),
        coefficients: solved.coefficients,
        fitted,
        residuals,
        condition: solved.condition,
    })
}

/// Minimizes `sum w_i r_i^2`; rows with zero weight drop out of the fit.
pub fn fit_wls(design: &DMatrix<f64>, response: &DVector<f64>, weights: &DVector<f64>) -> Result<LinearFit> {
    check_response(design, response)?;
    if weights.len() != response.len() {
        return Err(Error::InvalidInput("weights length mismatch".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let root = weights.map(f64::sqrt);
    let wd = scale_rows(design, &root);
    let wy = response.component_mul(&root);
    let solved = qr_least_squares(&wd, &wy)?;
    let fitted = design * &solved.coefficients;
    let residuals = response - &fitted;
    Ok(LinearFit {
        gram_inverse: &solved.r_inverse * solved.r_inverse.transpose(),
        coefficients: solved.coefficients,
        fitted,
        residuals,
        condition: solved.condition,
    })
}

fn check_response(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<()> {
    if design.nrows() != response.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            response.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLink {
    Logit,
    Probit,
}

impl BinaryLink {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            BinaryLink::Logit => expit(eta),
            BinaryLink::Probit => normal_cdf(eta),
        }
    }

    fn link(self, p: f64) -> f64 {
        match self {
            BinaryLink::Logit => logit(p),
            BinaryLink::Probit => normal_quantile(p),
        }
    }

    /// Log-likelihood contribution of one observation.
    fn loglik(self, y: f64, eta: f64) -> f64 {
        match self {
            // y*eta - log(1 + e^eta), computed without overflow.
            BinaryLink::Logit => y * eta - softplus(eta),
            BinaryLink::Probit => {
                let log_p = log_normal_cdf(eta);
                let log_q = log_normal_cdf(-eta);
                y * log_p + (1.0 - y) * log_q
            }
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn log_normal_cdf(u: f64) -> f64 {
    let p = normal_cdf(u);
    if p > 0.0 {
        p.ln()
    } else {
        // Mills-ratio asymptote for the far lower tail.
        -0.5 * u * u - (-u).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Options for [`fit_binary_with`].
#[derive(Debug, Clone, Copy)]
pub struct BinaryOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for BinaryOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }
}

/// Maximum-likelihood binary regression.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub coefficients: DVector<f64>,
    pub link: BinaryLink,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the score at the returned coefficients.
    pub score_norm: f64,
    /// Coefficient norm exceeded 1e4: likely (quasi-)separation.
    pub separation: bool,
    /// Log-likelihood after each accepted iteration (first entry: start point).
    pub loglik_trace: Vec<f64>,
}

impl BinaryFit {
    pub fn fitted_probabilities(&self, design: &DMatrix<f64>) -> DVector<f64> {
        (design * &self.coefficients).map(|eta| self.link.inverse(eta))
    }

    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

pub fn fit_binary(design: &DMatrix<f64>, response: &DVector<f64>, link: BinaryLink) -> Result<BinaryFit> {
    fit_binary_with(design, response, link, BinaryOptions::default())
}

const PROB_CLIP: f64 = 1e-12;

/// Log-likelihood of a binary regression at the given coefficients.
pub fn binary_loglik(design: &DMatrix<f64>, response: &DVector<f64>, link: BinaryLink, beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter().zip(response.iter()).map(|(&e, &y)| link.loglik(y, e)).sum()
}

fn score_and_information(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    link: BinaryLink,
    beta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let eta = design * beta;
    let n = response.len();
    let mut resid = DVector::zeros(n);
    let mut weight = DVector::zeros(n);
    for i in 0..n {
        let mu = link.inverse(eta[i]);
        match link {
            BinaryLink::Logit => {
                resid[i] = response[i] - mu;
                let m = mu.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                weight[i] = m * (1.0 - m);
            }
            BinaryLink::Probit => {
                let m = mu.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                let dens = normal_pdf(eta[i]);
                let v = m * (1.0 - m);
                resid[i] = (response[i] - mu) * dens / v;
                weight[i] = dens * dens / v;
            }
        }
    }
    (design.tr_mul(&resid), weight)
}

/// IRLS (Fisher scoring) with step-halving whenever the log-likelihood drops.
pub fn fit_binary_with(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    link: BinaryLink,
    options: BinaryOptions,
) -> Result<BinaryFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::InvalidInput("response length mismatch".into()));
    }
    if response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidInput("binary response must be coded 0/1".into()));
    }
    let mean = response.mean();
    if mean == 0.0 || mean == 1.0 {
        return Err(Error::InvalidInput("binary response has a single class".into()));
    }
    // Rank check up front so failures surface as singular designs.
    qr_least_squares(design, response)?;

    let mut beta = DVector::zeros(p);
    if let Some(j) = (0..p).find(|&j| design.column(j).iter().all(|&v| v == 1.0)) {
        beta[j] = link.link(mean);
    }
    let mut ll = binary_loglik(design, response, link, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let (mut score, mut weight) = score_and_information(design, response, link, &beta);

    while iterations < options.max_iterations {
        if max_abs(&score) <= options.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        // Newton direction via least squares on the weighted design:
        // (X'WX) delta = score  <=>  min || sqrt(W) X delta - score_working ||.
        let root = weight.map(f64::sqrt);
        let wx = scale_rows(design, &root);
        let info = wx.tr_mul(&wx);
        let delta = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => match info.lu().solve(&score) {
                Some(d) => d,
                None => break,
            },
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta + &delta * step;
            let cand_ll = binary_loglik(design, response, link, &candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
        let next = score_and_information(design, response, link, &beta);
        score = next.0;
        weight = next.1;
    }
    if !converged && max_abs(&score) <= options.tolerance {
        converged = true;
    }
    // One polishing step tightens the score identities the bias-reduced
    // estimators rely on; kept only if it does not worsen the score.
    if converged {
        let root = weight.map(f64::sqrt);
        let wx = scale_rows(design, &root);
        if let Some(ch) = wx.tr_mul(&wx).cholesky() {
            let candidate = &beta + ch.solve(&score);
            let (cand_score, _) = score_and_information(design, response, link, &candidate);
            if max_abs(&cand_score) < max_abs(&score) {
                beta = candidate;
                score = cand_score;
                ll = binary_loglik(design, response, link, &beta);
                if let Some(last) = trace.last_mut() {
                    *last = last.max(ll);
                }
            }
        }
    }
    let score_norm = max_abs(&score);
    Ok(BinaryFit {
        separation: beta.norm() > 1e4,
        coefficients: beta,
        link,
        converged,
        iterations,
        score_norm,
        loglik_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_anchor_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959963985) - 0.975).abs() < 1e-9);
        for u in [-3.0, -1.0, 0.5, 2.0, 5.0] {
            assert!((normal_cdf(-u) - (1.0 - normal_cdf(u))).abs() < 1e-15);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-10, 0.001, 0.025, 0.27, 0.5, 0.8, 0.999_999] {
            let u = normal_quantile(p);
            assert!((normal_cdf(u) - p).abs() <= 1e-9 * p.max(1e-3), "p={p}");
        }
    }

    #[test]
    fn ols_identity_design() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![3.0, 5.0]);
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-14);
        assert!((fit.coefficients[1] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn ols_response_in_span_has_zero_residuals() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = &x * DVector::from_vec(vec![0.5, -2.0]);
        let fit = fit_ols(&x, &y).unwrap();
        assert!(max_abs(&fit.residuals) < 1e-12);
    }

    #[test]
    fn wls_constant_weights_match_ols() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, 2.0, 1.0, 3.5, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.5, 2.0, 7.0]);
        let ols = fit_ols(&x, &y).unwrap();
        let wls = fit_wls(&x, &y, &DVector::from_element(4, 2.0)).unwrap();
        assert!((ols.coefficients - wls.coefficients).amax() < 1e-12);
    }

    #[test]
    fn wls_zero_weight_excludes_row() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, 2.0, 1.0, 3.5, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.5, 2.0, 7.0]);
        let w = DVector::from_vec(vec![1.0, 1.0, 1.0, 0.0]);
        let wls = fit_wls(&x, &y, &w).unwrap();
        let sub = fit_ols(&x.rows(0, 3).into_owned(), &y.rows(0, 3).into_owned()).unwrap();
        assert!((sub.coefficients - wls.coefficients).amax() < 1e-12);
    }

    #[test]
    fn wls_all_zero_weights_rejected() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            fit_wls(&x, &y, &DVector::zeros(2)),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn intercept_only_logit_is_log_odds() {
        let x = DMatrix::from_element(8, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let fit = fit_binary(&x, &y, BinaryLink::Logit).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - (0.25f64 / 0.75).ln()).abs() < 1e-10);
    }

    #[test]
    fn intercept_only_probit_half() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let fit = fit_binary(&x, &y, BinaryLink::Probit).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_element(3, 1.0);
        assert!(fit_binary(&x, &y, BinaryLink::Logit).is_err());
    }

    #[test]
    fn separation_flagged() {
        let x = DMatrix::from_row_slice(6, 2, &[1.0, -3.0, 1.0, -2.0, 1.0, -1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let fit = fit_binary(&x, &y, BinaryLink::Logit).unwrap();
        assert!(!fit.converged || fit.separation || fit.coefficients.norm() > 10.0);
    }
}
