//! Estimators behind one trait, registered by name and selected at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adaptive::{br_beta_estimate, br_gamma_estimate, eem_estimate};
use crate::basis::{BasisSpec, Term};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    g_estimate, locally_efficient_y, plug_in_two_stage, preliminary_outcome, standard_tsls, EstimateResult, Update,
};
use crate::inference::attach_sandwich;
use crate::models::{
    efficient_index, EffectForm, ExposureModel, ExposureSpec, IndexFunction, IvModel, IvSpec, OutcomeModel,
};

pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, data: &Dataset) -> Result<EstimateResult>;

    /// Point estimate only.
    fn psi(&self, data: &Dataset) -> Result<DVector<f64>> {
        self.estimate(data).map(|r| r.psi_hat)
    }
}

/// Index choice for the generic G-estimator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSpec {
    #[default]
    Raw,
    Custom(BasisSpec),
}

/// Everything an estimator needs besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub effect: EffectForm,
    #[serde(default)]
    pub outcome_basis: BasisSpec,
    /// Instrument columns for Standard TSLS (and preliminary estimates); defaults to every instrument.
    #[serde(default)]
    pub instrument_basis: Option<BasisSpec>,
    #[serde(default)]
    pub exposure: Option<ExposureSpec>,
    #[serde(default)]
    pub iv: Option<IvSpec>,
    #[serde(default)]
    pub index: Option<IndexSpec>,
    /// Covariate basis `b(C)` of the index `(alpha' b) Z`; defaults to the outcome basis.
    #[serde(default)]
    pub index_basis: Option<BasisSpec>,
    #[serde(default)]
    pub update: Update,
    /// Confidence level of the Wald interval attached to each fit.
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

impl ModelSpec {
    pub fn new(outcome_basis: BasisSpec) -> Self {
        Self {
            outcome_basis,
            level: default_level(),
            ..Self::default()
        }
    }

    pub fn with_effect(mut self, effect: EffectForm) -> Self {
        self.effect = effect;
        self
    }

    pub fn with_instruments(mut self, basis: BasisSpec) -> Self {
        self.instrument_basis = Some(basis);
        self
    }

    pub fn with_exposure(mut self, exposure: ExposureSpec) -> Self {
        self.exposure = Some(exposure);
        self
    }

    pub fn with_iv(mut self, iv: IvSpec) -> Self {
        self.iv = Some(iv);
        self
    }

    pub fn with_index(mut self, index: IndexSpec) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_index_basis(mut self, basis: BasisSpec) -> Self {
        self.index_basis = Some(basis);
        self
    }

    pub fn with_update(mut self, update: Update) -> Self {
        self.update = update;
        self
    }

    fn instruments(&self, data: &Dataset) -> BasisSpec {
        self.instrument_basis
            .clone()
            .unwrap_or_else(|| BasisSpec::new((0..data.q()).map(Term::InstrumentColumn).collect()))
    }

    fn index_basis(&self) -> BasisSpec {
        self.index_basis.clone().unwrap_or_else(|| self.outcome_basis.clone())
    }

    fn exposure(&self) -> Result<&ExposureSpec> {
        self.exposure
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("this estimator needs an exposure model".into()))
    }

    fn iv(&self) -> Result<&IvSpec> {
        self.iv
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("this estimator needs an instrument model".into()))
    }

    fn logistic_iv_basis(&self) -> Result<&BasisSpec> {
        match self.iv()? {
            IvSpec::Logistic(b) => Ok(b),
            _ => Err(Error::InvalidInput(
                "bias-reduced estimators need a logistic instrument model".into(),
            )),
        }
    }

    fn require_constant(&self) -> Result<()> {
        if self.effect != EffectForm::Constant {
            return Err(Error::Unsupported(
                "this estimator is defined for the constant-effect model only".into(),
            ));
        }
        Ok(())
    }
}

type Runner = fn(&ModelSpec, &Dataset) -> Result<EstimateResult>;

struct Configured {
    name: String,
    spec: ModelSpec,
    run: Runner,
}

impl Estimator for Configured {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, data: &Dataset) -> Result<EstimateResult> {
        let mut result = (self.run)(&self.spec, data)?;
        if let Err(e) = attach_sandwich(&mut result, self.spec.level) {
            result
                .diagnostics
                .warnings
                .push(format!("standard errors unavailable: {e}"));
        }
        Ok(result)
    }

    fn psi(&self, data: &Dataset) -> Result<DVector<f64>> {
        (self.run)(&self.spec, data).map(|r| r.psi_hat)
    }
}

/// Wraps a closure as an estimator.
pub struct FnEstimator<F> {
    name: String,
    f: F,
}

impl<F> FnEstimator<F>
where
    F: Fn(&Dataset) -> Result<EstimateResult> + Send + Sync,
{
    pub fn new(name: &str, f: F) -> Self {
        Self {
            name: name.to_string(),
            f,
        }
    }
}

impl<F> Estimator for FnEstimator<F>
where
    F: Fn(&Dataset) -> Result<EstimateResult> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, data: &Dataset) -> Result<EstimateResult> {
        (self.f)(data)
    }
}

/// Estimator with a display label, as used in Monte Carlo panels.
#[derive(Clone)]
pub struct NamedEstimator {
    pub label: String,
    pub estimator: Arc<dyn Estimator>,
}

impl NamedEstimator {
    pub fn new(label: &str, estimator: Arc<dyn Estimator>) -> Self {
        Self {
            label: label.to_string(),
            estimator,
        }
    }
}

type Validator = fn(&ModelSpec) -> Result<()>;

pub struct Registry {
    entries: BTreeMap<String, (Runner, Validator)>,
}

impl Registry {
    /// The eight built-in estimators.
    pub fn standard() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("tsls", run_tsls, |_| Ok(()));
        r.register("two-stage", run_two_stage, |s| s.exposure().map(|_| ()));
        r.register("loc-eff-y", run_loc_eff_y, |s| s.exposure().map(|_| ()));
        r.register("g-est", run_g_est, |s| s.iv().map(|_| ()));
        r.register("loc-eff-dr", run_loc_eff_dr, |s| {
            s.exposure()?;
            s.iv().map(|_| ())
        });
        r.register("eem", run_eem, |s| {
            s.require_constant()?;
            s.iv().map(|_| ())
        });
        r.register("br-gamma", run_br_gamma, |s| {
            s.require_constant()?;
            s.logistic_iv_basis().map(|_| ())
        });
        r.register("br-beta", run_br_beta, |s| {
            s.require_constant()?;
            s.logistic_iv_basis().map(|_| ())
        });
        r
    }

    pub fn register(&mut self, name: &str, run: Runner, validate: Validator) {
        self.entries.insert(name.to_string(), (run, validate));
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Validates the specification for the named estimator and builds it.
    pub fn build(&self, name: &str, spec: &ModelSpec) -> Result<Arc<dyn Estimator>> {
        let (run, validate) = self.entries.get(name).ok_or_else(|| Error::UnknownEstimator {
            name: name.to_string(),
            valid: self.names().join(", "),
        })?;
        validate(spec)?;
        Ok(Arc::new(Configured {
            name: name.to_string(),
            spec: spec.clone(),
            run: *run,
        }))
    }
}

fn run_tsls(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    standard_tsls(data, &spec.effect, &spec.outcome_basis, &spec.instruments(data))
}

fn run_two_stage(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    plug_in_two_stage(data, spec.exposure()?, &spec.effect, &spec.outcome_basis)
}

/// Standard TSLS as the starting value of a one-step update.
fn tsls_start(spec: &ModelSpec, data: &Dataset) -> Result<DVector<f64>> {
    Ok(run_tsls(spec, data)?.psi_hat)
}

fn run_loc_eff_y(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    let exposure = ExposureModel::fit(data, spec.exposure()?)?;
    let mut warnings = Vec::new();
    let start = match spec.update {
        Update::OneStep => match tsls_start(spec, data) {
            Ok(s) => Some(s),
            Err(e) => {
                warnings.push(format!("starting value unavailable ({e}); stepping from zero"));
                None
            }
        },
        Update::FullSolve => None,
    };
    let mut r = locally_efficient_y(
        data,
        &exposure,
        &spec.effect,
        &spec.outcome_basis,
        spec.update,
        start.as_ref(),
    )?;
    r.diagnostics.warnings.extend(warnings);
    Ok(r)
}

/// G-estimation with the outcome model fitted by OLS at the TSLS estimate.
fn g_with_preliminary(spec: &ModelSpec, data: &Dataset, index: &IndexFunction, iv: &IvModel) -> Result<EstimateResult> {
    let psi0 = tsls_start(spec, data)?;
    let outcome = if spec.outcome_basis.is_empty() {
        OutcomeModel::zero()
    } else {
        preliminary_outcome(data, &spec.effect, &spec.outcome_basis, &psi0)?
    };
    let mut r = g_estimate(data, index, &outcome, iv, &spec.effect, spec.update, Some(&psi0))?;
    r.diagnostics.extra.insert("preliminary_psi".into(), psi0[0]);
    Ok(r)
}

fn run_g_est(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    let iv = IvModel::fit(data, spec.iv()?)?;
    let index = match spec.index.clone().unwrap_or_default() {
        IndexSpec::Raw => IndexFunction::RawInstruments,
        IndexSpec::Custom(b) => IndexFunction::Custom(b),
    };
    g_with_preliminary(spec, data, &index, &iv)
}

fn run_loc_eff_dr(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    let exposure = ExposureModel::fit(data, spec.exposure()?)?;
    let iv = IvModel::fit(data, spec.iv()?)?;
    let index = efficient_index(data, &exposure, &iv, &spec.effect)?;
    let mut r = g_with_preliminary(spec, data, &index, &iv)?;
    r.nuisance.exposure = Some(exposure);
    Ok(r)
}

fn run_eem(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    let iv = IvModel::fit(data, spec.iv()?)?;
    Ok(eem_estimate(data, &iv, &spec.index_basis(), &spec.outcome_basis, spec.update)?.0)
}

fn run_br_gamma(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    Ok(br_gamma_estimate(
        data,
        &spec.index_basis(),
        &spec.outcome_basis,
        spec.logistic_iv_basis()?,
    )?
    .0)
}

fn run_br_beta(spec: &ModelSpec, data: &Dataset) -> Result<EstimateResult> {
    Ok(br_beta_estimate(
        data,
        &spec.index_basis(),
        &spec.outcome_basis,
        spec.logistic_iv_basis()?,
    )?
    .0)
}
