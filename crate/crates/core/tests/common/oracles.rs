//! Independent recomputations of library results. Each function returns the
//! measured discrepancy so both the oracle tests and the acceptance run can use it.

use ivrobust::adaptive::{br_beta_estimate, br_gamma_estimate, eem_estimate, eem_objective, BrFit};
use ivrobust::dataset::Dataset;
use ivrobust::estimators::{g_estimate, standard_tsls, Update};
use ivrobust::glm::{fit_binary, fit_ols, fit_wls, normal_cdf, BinaryLink};
use ivrobust::inference::psi_sandwich_se;
use ivrobust::models::{EffectForm, IndexFunction, IvModel, IvSpec, OutcomeModel};
use ivrobust::nalgebra::{DMatrix, DVector};
use ivrobust::rng::{Domain, StreamRng};
use ivrobust::simlab::Generator;

use super::*;

fn col(data: &Dataset, which: char) -> Vec<f64> {
    match which {
        'y' => data.y().iter().copied().collect(),
        'x' => data.x().iter().copied().collect(),
        'z' => data.z().column(0).iter().copied().collect(),
        _ => data.covariates().column(0).iter().copied().collect(),
    }
}

fn to_dmatrix(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j])
}

fn random_problem(n: usize, p: usize, seed: u64) -> (Mat, Vec<f64>) {
    let mut rng = StreamRng::new(seed, Domain::Auxiliary, 7);
    let x: Mat = (0..n).map(|_| (0..p).map(|_| rng.normal()).collect()).collect();
    let y = x.iter().map(|r| r.iter().sum::<f64>() + rng.normal()).collect();
    (x, y)
}

/// Relative discrepancy between `fit_ols` and `(X'X)^-1 X'y` on a random 20x3 problem.
pub fn ols_normal_equations() -> f64 {
    let (x, y) = random_problem(20, 3, 1);
    let xt = transpose(&x);
    let oracle = solve(matmul(&xt, &x), matvec(&xt, &y));
    let fit = fit_ols(&to_dmatrix(&x), &DVector::from_vec(y)).unwrap();
    (0..3)
        .map(|j| rel_err(fit.coefficients[j], oracle[j]))
        .fold(0.0, f64::max)
}

/// Relative discrepancy between `fit_wls` and `(X'WX)^-1 X'Wy` with random positive weights.
pub fn wls_normal_equations() -> f64 {
    let (x, y) = random_problem(30, 4, 2);
    let mut rng = StreamRng::new(3, Domain::Auxiliary, 8);
    let w: Vec<f64> = (0..30).map(|_| 0.1 + 2.0 * rng.uniform()).collect();
    let xw: Mat = x
        .iter()
        .zip(&w)
        .map(|(r, wi)| r.iter().map(|v| v * wi).collect())
        .collect();
    let xwt = transpose(&xw);
    let oracle = solve(matmul(&xwt, &x), matvec(&xwt, &y));
    let fit = fit_wls(&to_dmatrix(&x), &DVector::from_vec(y), &DVector::from_vec(w)).unwrap();
    (0..4)
        .map(|j| rel_err(fit.coefficients[j], oracle[j]))
        .fold(0.0, f64::max)
}

fn logistic_loglik(design: &Mat, z: &[f64], beta: &[f64]) -> f64 {
    design
        .iter()
        .zip(z)
        .map(|(r, zi)| {
            let p = expit(r.iter().zip(beta).map(|(a, b)| a * b).sum());
            zi * p.ln() + (1.0 - zi) * (1.0 - p).ln()
        })
        .sum()
}

/// `loglik(fit) - max loglik` over the {-0.01, 0, 0.01}^2 grid around the fit; non-negative at an optimum.
pub fn logistic_grid_gap() -> f64 {
    let mut rng = StreamRng::new(4, Domain::Auxiliary, 9);
    let t: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let z: Vec<f64> = t.iter().map(|ti| rng.bernoulli(expit(0.3 + 0.8 * ti))).collect();
    let ones = vec![1.0; 50];
    let design = columns(&[&ones, &t]);
    let fit = fit_binary(&to_dmatrix(&design), &DVector::from_vec(z.clone()), BinaryLink::Logit).unwrap();
    let beta: Vec<f64> = fit.coefficients.iter().copied().collect();
    let at_fit = logistic_loglik(&design, &z, &beta);
    let mut best_other = f64::NEG_INFINITY;
    for da in [-0.01, 0.0, 0.01] {
        for db in [-0.01, 0.0, 0.01] {
            if da == 0.0 && db == 0.0 {
                continue;
            }
            best_other = best_other.max(logistic_loglik(&design, &z, &[beta[0] + da, beta[1] + db]));
        }
    }
    at_fit - best_other
}

/// Largest `|normal_cdf(u) - trapezoid integral of the density|` over the reference points.
pub fn normal_cdf_quadrature_error() -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    [-3.0, -1.0, 0.5, 2.0]
        .iter()
        .map(|&u| {
            let lo = -15.0;
            let m = 10_000_000usize;
            let h = (u - lo) / m as f64;
            let interior: f64 = (1..m).map(|k| pdf(lo + k as f64 * h)).sum();
            let integral = h * (0.5 * pdf(lo) + interior + 0.5 * pdf(u));
            (normal_cdf(u) - integral).abs()
        })
        .fold(0.0, f64::max)
}

/// `(psi error, beta error)` between `standard_tsls` and `(D'PD)^-1 D'PY` on a seeded n=8 dataset.
pub fn tsls_projection_error() -> (f64, f64) {
    let data = toy(8, 3);
    let (y, x, z, v) = (col(&data, 'y'), col(&data, 'x'), col(&data, 'z'), col(&data, 'v'));
    let ones = vec![1.0; 8];
    let a = columns(&[&z, &ones, &v]);
    let d = columns(&[&ones, &v, &x]);
    let at = transpose(&a);
    let p = matmul(&matmul(&a, &inverse(&matmul(&at, &a))), &at);
    let dt_p = matmul(&transpose(&d), &p);
    let theta = solve(matmul(&dt_p, &d), matvec(&dt_p, &y));
    let fit = standard_tsls(&data, &EffectForm::Constant, &basis("1, v"), &basis("z")).unwrap();
    let psi_err = rel_err(fit.psi_hat[0], theta[2]);
    let beta_err = (0..2).map(|j| rel_err(fit.beta_hat[j], theta[j])).fold(0.0, f64::max);
    (psi_err, beta_err)
}

/// `|g_estimate - bisection root|` for a seeded n=10 dataset under a declared instrument law.
pub fn g_bisection_error() -> f64 {
    let data = toy(10, 4);
    let (y, x, z, v) = (col(&data, 'y'), col(&data, 'x'), col(&data, 'z'), col(&data, 'v'));
    let gamma = [-0.3, 0.6];
    let beta = [0.2, 0.5];
    let u = |psi: f64| -> f64 {
        (0..10)
            .map(|i| (z[i] - expit(gamma[0] + gamma[1] * v[i])) * (y[i] - beta[0] - beta[1] * v[i] - psi * x[i]))
            .sum()
    };
    let (mut lo, mut hi) = (-100.0, 100.0);
    assert!(u(lo) * u(hi) < 0.0, "bracket must contain the root");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if u(lo) * u(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let iv = IvModel::known_logistic(basis("1, v"), DVector::from_row_slice(&gamma)).unwrap();
    let outcome = OutcomeModel::new(basis("1, v"), DVector::from_row_slice(&beta)).unwrap();
    let fit = g_estimate(
        &data,
        &IndexFunction::RawInstruments,
        &outcome,
        &iv,
        &EffectForm::Constant,
        Update::FullSolve,
        None,
    )
    .unwrap();
    (fit.psi_hat[0] - root).abs()
}

/// Wald ratio of a four-row example whose exact value is 2.
pub fn wald_hand_example() -> f64 {
    let data = Dataset::from_columns(
        &[1.0, 3.0, 4.0, 8.0],
        &[0.0, 1.0, 2.0, 3.0],
        &[0.0, 0.0, 1.0, 1.0],
        &[&[0.3, -0.2, 0.8, 0.1]],
    )
    .unwrap();
    let iv = IvModel::fit(&data, &IvSpec::Empirical).unwrap();
    g_estimate(
        &data,
        &IndexFunction::RawInstruments,
        &OutcomeModel::zero(),
        &iv,
        &EffectForm::Constant,
        Update::FullSolve,
        None,
    )
    .unwrap()
    .psi_hat[0]
}

/// Datasets on which the bias-reduced fits are checked.
pub fn br_datasets() -> Vec<Dataset> {
    let mut out = Vec::new();
    for (lx, ly, lz) in [(0.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, -1.0), (-1.0, 1.0, 1.0)] {
        for seed in 1..=3 {
            out.push(Generator::Table1 { lx, ly, lz }.generate(500, seed).unwrap().dataset);
        }
    }
    out
}

/// `||sum_i e_i (Z_i - p_i) (1, V_i)||_inf` for one BR-gamma fit, recomputed from its fields.
pub fn br_gamma_residual_recomputed(data: &Dataset, fit: &BrFit) -> f64 {
    let (z, v) = (col(data, 'z'), col(data, 'v'));
    let mut s = [0.0, 0.0];
    for i in 0..data.n() {
        let w = fit.index_values[i] * (z[i] - fit.probabilities[i]);
        s[0] += w;
        s[1] += w * v[i];
    }
    s[0].abs().max(s[1].abs())
}

/// The `beta` estimating-equation residual of a BR-beta fit with index, outcome and
/// instrument bases all `(1, V)`, rebuilt from the fitted values.
pub fn br_beta_residual_recomputed(data: &Dataset, fit: &BrFit, psi: f64) -> f64 {
    let n = data.n();
    let nf = n as f64;
    let (y, x, z, v) = (col(data, 'y'), col(data, 'x'), col(data, 'z'), col(data, 'v'));
    let e = &fit.index_values;
    let p = &fit.probabilities;
    let b = &fit.beta_hat;
    assert_eq!(b.len(), 4, "no extension column is collinear on these designs");
    let a_bar = {
        let mut s = [0.0, 0.0];
        for i in 0..n {
            let w = e[i] * p[i] * (1.0 - p[i]) * x[i];
            s[0] += w;
            s[1] += w * v[i];
        }
        [s[0] / nf, s[1] / nf]
    };
    let b_bar = (0..n).map(|i| e[i] * (z[i] - p[i]) * x[i]).sum::<f64>() / nf;
    let mut total = [0.0, 0.0];
    for i in 0..n {
        let w = e[i] * p[i] * (1.0 - p[i]);
        let m_y = b[0] + b[1] * v[i] + b[2] * w + b[3] * w * v[i];
        let eps = y[i] - m_y - psi * x[i];
        let a_i = [1.0, v[i]];
        for k in 0..2 {
            let gamma_ik = (z[i] - p[i]) * a_bar[k] - p[i] * (1.0 - p[i]) * a_i[k] * b_bar;
            total[k] += e[i] * eps * gamma_ik;
        }
    }
    total[0].abs().max(total[1].abs())
}

/// Largest BR-gamma score and BR-beta estimating-equation residuals over every converged bias-reduced fit in [`br_datasets`].
pub fn br_residuals() -> (f64, f64) {
    let b = basis("1, v");
    let mut worst = (0.0_f64, 0.0_f64);
    for data in br_datasets() {
        let (_, g) = br_gamma_estimate(&data, &b, &b, &b).unwrap();
        if g.converged {
            worst.0 = worst.0.max(br_gamma_residual_recomputed(&data, &g));
        }
        let (r, bfit) = br_beta_estimate(&data, &b, &b, &b).unwrap();
        worst.1 = worst.1.max(br_beta_residual_recomputed(&data, &bfit, r.psi_hat[0]));
    }
    worst
}

/// Relative gap between `eem_objective` and a from-scratch evaluation on a seeded n=20 dataset.
pub fn eem_objective_rederivation() -> f64 {
    let data = toy(20, 5);
    let (y, x, z, v) = (col(&data, 'y'), col(&data, 'x'), col(&data, 'z'), col(&data, 'v'));
    let iv = IvModel::fit(&data, &IvSpec::Logistic(basis("1, v"))).unwrap();
    let gamma = iv.coefficients();
    let (alpha, beta, psi) = ([0.7, -0.4], [0.1, 0.3], 0.9);
    let d: Vec<f64> = (0..20)
        .map(|i| (alpha[0] + alpha[1] * v[i]) * (z[i] - expit(gamma[0] + gamma[1] * v[i])))
        .collect();
    let de: Vec<f64> = (0..20)
        .map(|i| d[i] * (y[i] - beta[0] - beta[1] * v[i] - psi * x[i]))
        .collect();
    let dx: Vec<f64> = (0..20).map(|i| d[i] * x[i]).collect();
    let oracle = variance(&de) / (20.0 * mean(&dx).powi(2));
    let b = basis("1, v");
    let got = eem_objective(
        &data,
        &iv,
        &DVector::from_row_slice(&alpha),
        &DVector::from_row_slice(&beta),
        psi,
        &b,
        &b,
    )
    .unwrap();
    (got - oracle).abs() / oracle
}

/// Objective at `(alpha~, beta~)` against the smallest objective in a random cloud of
/// `points` joint perturbations with relative scale `scale`.
#[derive(Debug, Clone, Copy)]
pub struct Cloud {
    pub at_tilde: f64,
    pub cloud_min: f64,
    pub alpha_min: f64,
    pub beta_min: f64,
}

pub fn eem_cloud(data: &Dataset, points: usize, scale: f64, seed: u64) -> Cloud {
    let b = basis("1, v");
    let iv = IvModel::fit(data, &IvSpec::Logistic(b.clone())).unwrap();
    let (_, fit) = eem_estimate(data, &iv, &b, &b, Update::OneStep).unwrap();
    let psi = fit.preliminary_psi;
    let objective = |a: &DVector<f64>, bb: &DVector<f64>| eem_objective(data, &iv, a, bb, psi, &b, &b).unwrap();
    let at_tilde = objective(&fit.alpha_tilde, &fit.beta_tilde);
    let mut rng = StreamRng::new(seed, Domain::Auxiliary, 11);
    let sa = scale * fit.alpha_tilde.amax();
    let sb = scale * fit.beta_tilde.amax().max(1.0);
    let mut out = Cloud {
        at_tilde,
        cloud_min: f64::INFINITY,
        alpha_min: f64::INFINITY,
        beta_min: f64::INFINITY,
    };
    for _ in 0..points {
        let a = fit.alpha_tilde.map(|t| t + sa * rng.normal());
        let bb = fit.beta_tilde.map(|t| t + sb * rng.normal());
        out.cloud_min = out.cloud_min.min(objective(&a, &bb));
        out.alpha_min = out.alpha_min.min(objective(&a, &fit.beta_tilde));
        out.beta_min = out.beta_min.min(objective(&fit.alpha_tilde, &bb));
    }
    out
}

/// Relative gap between the TSLS sandwich SE in the OLS special case and the HC0 formula.
pub fn hc0_error() -> f64 {
    let base = toy(60, 6);
    let (y, x, v) = (col(&base, 'y'), col(&base, 'x'), col(&base, 'v'));
    // Instrumenting X by itself reduces TSLS to OLS of Y on (1, V, X).
    let data = Dataset::from_columns(&y, &x, &x, &[&v]).unwrap();
    let fit = standard_tsls(&data, &EffectForm::Constant, &basis("1, v"), &basis("z")).unwrap();
    let se = psi_sandwich_se(fit.influence.as_ref().unwrap()).unwrap()[0];

    let ones = vec![1.0; 60];
    let design = columns(&[&ones, &v, &x]);
    let dt = transpose(&design);
    let bread = inverse(&matmul(&dt, &design));
    let coef = matvec(&bread, &matvec(&dt, &y));
    let resid: Vec<f64> = design
        .iter()
        .zip(&y)
        .map(|(r, yi)| yi - r.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut meat = vec![vec![0.0; 3]; 3];
    for (r, e) in design.iter().zip(&resid) {
        for j in 0..3 {
            for k in 0..3 {
                meat[j][k] += e * e * r[j] * r[k];
            }
        }
    }
    let cov = matmul(&matmul(&bread, &meat), &bread);
    rel_err(se, cov[2][2].sqrt())
}
