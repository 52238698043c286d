//! Declarative run description, loaded from JSON and overridden by flags.

use std::path::PathBuf;

use ivrobust::basis::BasisSpec;
use ivrobust::dataset::ColumnMapping;
use ivrobust::estimators::Update;
use ivrobust::models::{EffectForm, ExposureLink, ExposureSpec, IvSpec};
use ivrobust::registry::ModelSpec;
use ivrobust::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InferenceChoice {
    None,
    #[default]
    Sandwich,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum IvKind {
    Logistic,
    Linear,
    Empirical,
}

/// One analysis. Bases are comma-separated term lists over the mapped column
/// names, e.g. `"1, v, v^2, z*v"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub columns: Option<ColumnMapping>,
    pub estimator: Option<String>,
    /// Basis of `m(C;psi)`; omitted means a constant effect.
    pub effect_basis: Option<String>,
    pub outcome_basis: Option<String>,
    pub instrument_basis: Option<String>,
    pub exposure_link: Option<ExposureLink>,
    pub exposure_basis: Option<String>,
    pub iv_model: Option<IvKind>,
    pub iv_basis: Option<String>,
    pub index_basis: Option<String>,
    pub update: Option<Update>,
    pub inference: Option<InferenceChoice>,
    pub resamples: Option<usize>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Spec(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            data,
            columns,
            estimator,
            effect_basis,
            outcome_basis,
            instrument_basis,
            exposure_link,
            exposure_basis,
            iv_model,
            iv_basis,
            index_basis,
            update,
            inference,
            resamples,
            level,
            seed,
            out
        );
        self
    }

    pub fn columns(&self) -> Result<&ColumnMapping> {
        self.columns
            .as_ref()
            .ok_or_else(|| Error::Spec("no column mapping given (need --y, --x and --z)".into()))
    }

    pub fn estimator(&self) -> Result<&str> {
        self.estimator
            .as_deref()
            .ok_or_else(|| Error::Spec("no estimator given".into()))
    }

    /// Translates the textual bases into a model specification.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let names = self.columns()?;
        let parse = |text: &Option<String>| text.as_deref().map(|t| BasisSpec::parse(t, names)).transpose();
        let outcome = parse(&self.outcome_basis)?.unwrap_or_else(BasisSpec::intercept);
        let mut spec = ModelSpec::new(outcome);
        if let Some(effect) = parse(&self.effect_basis)? {
            spec = spec.with_effect(EffectForm::Linear(effect));
        }
        if let Some(instruments) = parse(&self.instrument_basis)? {
            spec = spec.with_instruments(instruments);
        }
        if let Some(basis) = parse(&self.exposure_basis)? {
            spec = spec.with_exposure(ExposureSpec::new(
                self.exposure_link.unwrap_or(ExposureLink::Identity),
                basis,
            ));
        } else if self.exposure_link.is_some() {
            return Err(Error::Spec("an exposure link needs an exposure basis".into()));
        }
        let iv_basis = parse(&self.iv_basis)?;
        let iv = match (self.iv_model, iv_basis) {
            (Some(IvKind::Empirical), _) => Some(IvSpec::Empirical),
            (Some(IvKind::Linear), Some(b)) => Some(IvSpec::Linear(b)),
            (Some(IvKind::Logistic) | None, Some(b)) => Some(IvSpec::Logistic(b)),
            (Some(kind), None) => {
                return Err(Error::Spec(format!("the {kind:?} instrument model needs an iv basis")));
            }
            (None, None) => None,
        };
        if let Some(iv) = iv {
            spec = spec.with_iv(iv);
        }
        if let Some(index) = parse(&self.index_basis)? {
            spec = spec.with_index_basis(index);
        }
        if let Some(update) = self.update {
            spec = spec.with_update(update);
        }
        if let Some(level) = self.level {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Spec(format!("confidence level must lie in (0,1), got {level}")));
            }
            spec.level = level;
        }
        Ok(spec)
    }
}
