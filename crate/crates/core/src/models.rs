//! Working models: the causal effect `m(C;psi)`, the outcome model
//! `m_y(C;beta)`, the exposure model `m_x(Z,C;alpha)`, the instrument model
//! `f(Z|C;gamma)` and the index functions `e(Z,C)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, build_design_with_instruments, BasisSpec, Term};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{fit_binary, fit_ols, normal_cdf, normal_pdf, BinaryLink};
use crate::linalg::scale_rows;

/// Form of the structural effect `m(C;psi)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectForm {
    /// `m(C;psi) = psi`.
    #[default]
    Constant,
    /// `m(C;psi) = psi' W(C)`.
    Linear(BasisSpec),
}

impl EffectForm {
    pub fn dim(&self) -> usize {
        match self {
            EffectForm::Constant => 1,
            EffectForm::Linear(b) => b.len(),
        }
    }

    /// Rows of `dm/dpsi`: a column of ones, or `W(C)`.
    pub fn derivative(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        match self {
            EffectForm::Constant => Ok(DMatrix::from_element(data.n(), 1, 1.0)),
            EffectForm::Linear(b) => {
                b.require_covariate_only("effect")?;
                if b.is_empty() {
                    return Err(Error::Spec("effect basis is empty".into()));
                }
                build_design(data, b)
            }
        }
    }

    /// Columns `X * W_k(C)`, the endogenous regressors of the effect model.
    pub fn exposure_columns(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        Ok(scale_rows(&self.derivative(data)?, data.x()))
    }
}

/// Effect model with its parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectModel {
    pub form: EffectForm,
    pub psi: DVector<f64>,
}

impl EffectModel {
    pub fn new(form: EffectForm, psi: DVector<f64>) -> Result<Self> {
        if psi.len() != form.dim() {
            return Err(Error::InvalidInput(format!(
                "effect parameter has length {} but the effect basis has {} terms",
                psi.len(),
                form.dim()
            )));
        }
        Ok(Self { form, psi })
    }

    /// `m(C_i;psi)` for every row.
    pub fn evaluate(&self, data: &Dataset) -> Result<DVector<f64>> {
        Ok(self.form.derivative(data)? * &self.psi)
    }
}

/// Linear outcome model `m_y(C;beta) = beta' basis(C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub basis: BasisSpec,
    pub beta: DVector<f64>,
}

impl OutcomeModel {
    pub fn new(basis: BasisSpec, beta: DVector<f64>) -> Result<Self> {
        basis.require_covariate_only("outcome")?;
        if basis.len() != beta.len() {
            return Err(Error::InvalidInput(
                "outcome coefficients do not match the basis".into(),
            ));
        }
        Ok(Self { basis, beta })
    }

    /// The model `m_y = 0`.
    pub fn zero() -> Self {
        Self {
            basis: BasisSpec::default(),
            beta: DVector::zeros(0),
        }
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<DVector<f64>> {
        if self.basis.is_empty() {
            return Ok(DVector::zeros(data.n()));
        }
        Ok(build_design(data, &self.basis)? * &self.beta)
    }

    /// OLS of `Y - m(C;psi) X` on the basis.
    pub fn fit_at(data: &Dataset, basis: &BasisSpec, effect: &EffectModel) -> Result<Self> {
        basis.require_covariate_only("outcome")?;
        if basis.is_empty() {
            return Ok(Self::zero());
        }
        let response = data.y() - effect.evaluate(data)?.component_mul(data.x());
        let fit = fit_ols(&build_design(data, basis)?, &response)?;
        Self::new(basis.clone(), fit.coefficients)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureLink {
    Identity,
    Logit,
    Probit,
}

/// Unfitted exposure model: link and basis over `(Z, C)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureSpec {
    pub link: ExposureLink,
    pub basis: BasisSpec,
}

impl ExposureSpec {
    pub fn new(link: ExposureLink, basis: BasisSpec) -> Self {
        Self { link, basis }
    }
}

/// Fitted exposure model `E(X|Z,C) = m_x(Z,C;alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureModel {
    pub link: ExposureLink,
    pub basis: BasisSpec,
    pub alpha: DVector<f64>,
    pub converged: bool,
}

impl ExposureModel {
    /// Identity link by OLS; logit/probit links by maximum likelihood (X must be binary).
    pub fn fit(data: &Dataset, spec: &ExposureSpec) -> Result<Self> {
        let design = build_design(data, &spec.basis)?;
        let (alpha, converged) = match spec.link {
            ExposureLink::Identity => (fit_ols(&design, data.x())?.coefficients, true),
            ExposureLink::Logit | ExposureLink::Probit => {
                let link = if spec.link == ExposureLink::Logit {
                    BinaryLink::Logit
                } else {
                    BinaryLink::Probit
                };
                let fit = fit_binary(&design, data.x(), link)?;
                if !fit.converged {
                    return Err(Error::NonConvergence {
                        iterations: fit.iterations,
                        score_norm: fit.score_norm,
                    });
                }
                (fit.coefficients, true)
            }
        };
        Ok(Self {
            link: spec.link,
            basis: spec.basis.clone(),
            alpha,
            converged,
        })
    }

    fn apply_link(&self, eta: f64) -> f64 {
        match self.link {
            ExposureLink::Identity => eta,
            ExposureLink::Logit => crate::glm::expit(eta),
            ExposureLink::Probit => normal_cdf(eta),
        }
    }

    /// Derivative of the inverse link at `eta`.
    pub(crate) fn link_derivative(&self, eta: f64) -> f64 {
        match self.link {
            ExposureLink::Identity => 1.0,
            ExposureLink::Logit => {
                let p = crate::glm::expit(eta);
                p * (1.0 - p)
            }
            ExposureLink::Probit => normal_pdf(eta),
        }
    }

    pub fn linear_predictor(&self, data: &Dataset) -> Result<DVector<f64>> {
        Ok(build_design(data, &self.basis)? * &self.alpha)
    }

    pub fn predict(&self, data: &Dataset) -> Result<DVector<f64>> {
        Ok(self.linear_predictor(data)?.map(|eta| self.apply_link(eta)))
    }

    /// `m_x` evaluated with every instrument set to `value`.
    pub fn predict_at_instrument(&self, data: &Dataset, value: f64) -> Result<DVector<f64>> {
        let z = DMatrix::from_element(data.n(), data.q(), value);
        let design = build_design_with_instruments(data, &self.basis, &z)?;
        Ok((design * &self.alpha).map(|eta| self.apply_link(eta)))
    }

    /// `E{m_x(Z,C)|C}` under the instrument model.
    ///
    /// Binary scalar instruments use the exact two-point mixture; otherwise the
    /// model must be linear in its coefficients with the identity link.
    pub fn conditional_mean(&self, data: &Dataset, iv: &IvModel) -> Result<DVector<f64>> {
        if data.has_binary_instrument() {
            let p = iv.probability(data)?;
            let m1 = self.predict_at_instrument(data, 1.0)?;
            let m0 = self.predict_at_instrument(data, 0.0)?;
            return Ok(DVector::from_fn(data.n(), |i, _| p[i] * m1[i] + (1.0 - p[i]) * m0[i]));
        }
        if self.link != ExposureLink::Identity {
            return Err(Error::Unsupported(
                "the conditional mean of a nonlinear exposure model needs a binary instrument".into(),
            ));
        }
        let mut out = DVector::zeros(data.n());
        for (term, a) in self.basis.terms.iter().zip(self.alpha.iter()) {
            out += iv.conditional_mean_term(data, term)? * *a;
        }
        Ok(out)
    }
}

/// Unfitted instrument model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvSpec {
    /// `P(Z=1|C) = expit(gamma' basis(C))`, fitted by maximum likelihood.
    Logistic(BasisSpec),
    /// `E(Z|C) = gamma' basis(C)` per instrument column, fitted by OLS.
    Linear(BasisSpec),
    /// Instruments independent of covariates: conditional mean is the sample mean.
    Empirical,
    /// Logistic law with known coefficients.
    KnownLogistic { basis: BasisSpec, gamma: Vec<f64> },
}

/// Fitted instrument model `f(Z|C;gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub enum IvModel {
    BinaryLogistic {
        basis: BasisSpec,
        gamma: DVector<f64>,
        /// False for a declared (not estimated) law.
        estimated: bool,
    },
    LinearMean {
        basis: BasisSpec,
        /// One coefficient column per instrument.
        gamma: DMatrix<f64>,
    },
    /// Sample moments of the instruments on the fitting data.
    Empirical { z: DMatrix<f64> },
}

impl IvModel {
    pub fn fit(data: &Dataset, spec: &IvSpec) -> Result<Self> {
        match spec {
            IvSpec::Logistic(basis) => {
                basis.require_covariate_only("instrument model")?;
                let z = binary_instrument(data)?;
                let fit = fit_binary(&build_design(data, basis)?, &z, BinaryLink::Logit)?;
                if !fit.converged {
                    return Err(Error::NonConvergence {
                        iterations: fit.iterations,
                        score_norm: fit.score_norm,
                    });
                }
                Ok(IvModel::BinaryLogistic {
                    basis: basis.clone(),
                    gamma: fit.coefficients,
                    estimated: true,
                })
            }
            IvSpec::Linear(basis) => {
                basis.require_covariate_only("instrument model")?;
                let design = build_design(data, basis)?;
                let mut gamma = DMatrix::zeros(basis.len(), data.q());
                for j in 0..data.q() {
                    let fit = fit_ols(&design, &data.z().column(j).into_owned())?;
                    gamma.set_column(j, &fit.coefficients);
                }
                Ok(IvModel::LinearMean {
                    basis: basis.clone(),
                    gamma,
                })
            }
            IvSpec::Empirical => Ok(IvModel::Empirical { z: data.z().clone() }),
            IvSpec::KnownLogistic { basis, gamma } => {
                Self::known_logistic(basis.clone(), DVector::from_vec(gamma.clone()))
            }
        }
    }

    /// A logistic instrument law with declared coefficients.
    pub fn known_logistic(basis: BasisSpec, gamma: DVector<f64>) -> Result<Self> {
        basis.require_covariate_only("instrument model")?;
        if basis.len() != gamma.len() {
            return Err(Error::InvalidInput(
                "instrument coefficients do not match the basis".into(),
            ));
        }
        Ok(IvModel::BinaryLogistic {
            basis,
            gamma,
            estimated: false,
        })
    }

    /// `E(Z|C)` as an `n x q` matrix.
    pub fn conditional_mean_z(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        match self {
            IvModel::BinaryLogistic { .. } => {
                let p = self.probability(data)?;
                Ok(DMatrix::from_column_slice(data.n(), 1, p.as_slice()))
            }
            IvModel::LinearMean { basis, gamma } => {
                if gamma.ncols() != data.q() {
                    return Err(Error::InvalidInput(
                        "instrument model fitted on a different instrument count".into(),
                    ));
                }
                Ok(build_design(data, basis)? * gamma)
            }
            IvModel::Empirical { z } => {
                if z.ncols() != data.q() {
                    return Err(Error::InvalidInput(
                        "instrument model fitted on a different instrument count".into(),
                    ));
                }
                let means = z.row_mean();
                Ok(DMatrix::from_fn(data.n(), data.q(), |_, j| means[j]))
            }
        }
    }

    /// `P(Z=1|C)` for a single binary instrument.
    pub fn probability(&self, data: &Dataset) -> Result<DVector<f64>> {
        match self {
            IvModel::BinaryLogistic { basis, gamma, .. } => {
                Ok((build_design(data, basis)? * gamma).map(crate::glm::expit))
            }
            _ => {
                if data.q() != 1 {
                    return Err(Error::Unsupported(
                        "success probabilities need a single instrument".into(),
                    ));
                }
                Ok(self.conditional_mean_z(data)?.column(0).into_owned())
            }
        }
    }

    /// `E{t(Z,C)|C}` for one basis term, written as `monomial(Z) * g(C)`.
    pub fn conditional_mean_term(&self, data: &Dataset, term: &Term) -> Result<DVector<f64>> {
        let (powers, g) = term.split_instruments();
        let gv = build_design(data, &BasisSpec::new(vec![g]))?.column(0).into_owned();
        if powers.is_empty() {
            return Ok(gv);
        }
        let moment = match self {
            IvModel::Empirical { z } => {
                let m = (0..z.nrows())
                    .map(|i| powers.iter().map(|&j| z[(i, j)]).product::<f64>())
                    .sum::<f64>()
                    / z.nrows() as f64;
                DVector::from_element(data.n(), m)
            }
            IvModel::BinaryLogistic { .. } => {
                // Z is 0/1, so every positive power of Z equals Z.
                self.probability(data)?
            }
            IvModel::LinearMean { .. } => {
                if powers.len() > 1 {
                    return Err(Error::Unsupported(
                        "a linear instrument-mean model only determines terms linear in the instruments".into(),
                    ));
                }
                self.conditional_mean_z(data)?.column(powers[0]).into_owned()
            }
        };
        Ok(gv.component_mul(&moment))
    }

    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            IvModel::BinaryLogistic { gamma, .. } => gamma.iter().copied().collect(),
            IvModel::LinearMean { gamma, .. } => gamma.iter().copied().collect(),
            IvModel::Empirical { z } => z.row_mean().iter().copied().collect(),
        }
    }
}

fn binary_instrument(data: &Dataset) -> Result<DVector<f64>> {
    if !data.has_binary_instrument() {
        return Err(Error::InvalidInput(
            "a logistic instrument model needs a single 0/1 instrument".into(),
        ));
    }
    data.scalar_instrument()
}

/// Index function `e(Z,C)` of the G-estimation equation.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexFunction {
    /// `e = Z`.
    RawInstruments,
    /// `e = (alpha' basis(C)) Z_j` for every instrument column `j`.
    ScaledInstrument { basis: BasisSpec, alpha: DVector<f64> },
    /// Each term of a basis over `(Z, C)` is one index component.
    Custom(BasisSpec),
    /// `dm/dpsi * [m_x(Z,C) - E{m_x(Z,C)|C}]`, already centered under `iv`.
    Efficient {
        exposure: ExposureModel,
        effect: EffectForm,
        iv: IvModel,
    },
}

impl IndexFunction {
    /// `e(Z_i,C_i)` as an `n x d` matrix.
    pub fn evaluate(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        match self {
            IndexFunction::RawInstruments => Ok(data.z().clone()),
            IndexFunction::ScaledInstrument { basis, alpha } => {
                let scale = scalar_index(data, basis, alpha)?;
                Ok(scale_rows(data.z(), &scale))
            }
            IndexFunction::Custom(basis) => build_design(data, basis),
            IndexFunction::Efficient { .. } => self.centered(data, None),
        }
    }

    /// `E{e(Z,C)|C_i}` under the instrument model.
    pub fn conditional_mean(&self, data: &Dataset, iv: &IvModel) -> Result<DMatrix<f64>> {
        match self {
            IndexFunction::RawInstruments => iv.conditional_mean_z(data),
            IndexFunction::ScaledInstrument { basis, alpha } => {
                let scale = scalar_index(data, basis, alpha)?;
                Ok(scale_rows(&iv.conditional_mean_z(data)?, &scale))
            }
            IndexFunction::Custom(basis) => {
                let mut out = DMatrix::zeros(data.n(), basis.len());
                for (k, term) in basis.terms.iter().enumerate() {
                    out.set_column(k, &iv.conditional_mean_term(data, term)?);
                }
                Ok(out)
            }
            IndexFunction::Efficient { effect, .. } => Ok(DMatrix::zeros(data.n(), effect.dim())),
        }
    }

    /// `e(Z_i,C_i) - E{e(Z,C)|C_i}`; `iv` may be omitted only for the efficient index.
    pub fn centered(&self, data: &Dataset, iv: Option<&IvModel>) -> Result<DMatrix<f64>> {
        if let IndexFunction::Efficient { exposure, effect, iv } = self {
            let w = effect.derivative(data)?;
            let m = exposure.predict(data)?;
            let centered = &m - exposure.conditional_mean(data, iv)?;
            return Ok(scale_rows(&w, &centered));
        }
        let iv = iv.ok_or_else(|| Error::InvalidInput("centering this index needs an instrument model".into()))?;
        Ok(self.evaluate(data)? - self.conditional_mean(data, iv)?)
    }

    pub fn dim(&self, data: &Dataset) -> usize {
        match self {
            IndexFunction::RawInstruments | IndexFunction::ScaledInstrument { .. } => data.q(),
            IndexFunction::Custom(b) => b.len(),
            IndexFunction::Efficient { effect, .. } => effect.dim(),
        }
    }
}

/// `alpha' basis(C_i)` for every row.
pub(crate) fn scalar_index(data: &Dataset, basis: &BasisSpec, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    basis.require_covariate_only("index")?;
    if basis.len() != alpha.len() {
        return Err(Error::InvalidInput("index coefficients do not match the basis".into()));
    }
    Ok(build_design(data, basis)? * alpha)
}

/// The locally efficient index under homoscedasticity (unit variance).
pub fn efficient_index(
    data: &Dataset,
    exposure: &ExposureModel,
    iv: &IvModel,
    effect: &EffectForm,
) -> Result<IndexFunction> {
    if !data.has_binary_instrument() && exposure.link != ExposureLink::Identity {
        return Err(Error::Unsupported(
            "the efficient index with a nonlinear exposure model needs a binary instrument".into(),
        ));
    }
    effect.derivative(data)?;
    Ok(IndexFunction::Efficient {
        exposure: exposure.clone(),
        effect: effect.clone(),
        iv: iv.clone(),
    })
}
