//! Estimator panels for the simulation designs. Datasets carry the columns
//! `y`, `x`, `z`, `v`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::basis::BasisSpec;
use crate::dataset::ColumnMapping;
use crate::estimators::{g_estimate, Update};
use crate::models::{EffectForm, ExposureLink, ExposureSpec, IndexFunction, IvModel, IvSpec, OutcomeModel};
use crate::registry::{Estimator, FnEstimator, ModelSpec, NamedEstimator, Registry};

fn basis(text: &str) -> BasisSpec {
    BasisSpec::parse(text, &ColumnMapping::new("y", "x", &["z"], &["v"])).expect("panel basis parses")
}

fn build(registry: &Registry, label: &str, name: &str, spec: ModelSpec) -> NamedEstimator {
    NamedEstimator::new(
        label,
        registry.build(name, &spec).expect("panel specification is valid"),
    )
}

/// TS, Loc Eff, EEM, BR-beta and BR-gamma with the working models of the
/// table1 and extreme designs.
pub fn table1_panel() -> Vec<NamedEstimator> {
    let reg = Registry::standard();
    let outcome = basis("1, v");
    let iv = IvSpec::Logistic(basis("1, v"));
    let base = ModelSpec::new(outcome.clone()).with_instruments(basis("z, z*v"));
    vec![
        build(&reg, "TS", "tsls", base.clone()),
        build(
            &reg,
            "Loc Eff",
            "loc-eff-dr",
            base.clone()
                .with_exposure(ExposureSpec::new(ExposureLink::Identity, basis("1, z, v, z*v")))
                .with_iv(iv.clone()),
        ),
        build(
            &reg,
            "EEM",
            "eem",
            base.clone().with_iv(iv.clone()).with_index_basis(outcome.clone()),
        ),
        build(
            &reg,
            "BR-beta",
            "br-beta",
            base.clone().with_iv(iv.clone()).with_index_basis(outcome.clone()),
        ),
        build(&reg, "BR-gamma", "br-gamma", base.with_iv(iv).with_index_basis(outcome)),
    ]
}

/// TSLS, TS, LE-y-c, LE-y-m, DR-cc, DR-cm and DR-mm for the binary-exposure designs.
pub fn sim_panel() -> Vec<NamedEstimator> {
    let reg = Registry::standard();
    let correct = basis("1, v, v^2");
    let wrong = basis("1, v");
    let probit = ExposureSpec::new(ExposureLink::Probit, basis("z, 1, v"));
    let linear = ExposureSpec::new(ExposureLink::Identity, basis("z, 1, v"));
    let iv = IvSpec::Logistic(basis("1, v"));
    let instruments = basis("z");
    let spec = |outcome: &BasisSpec| ModelSpec::new(outcome.clone()).with_instruments(instruments.clone());
    vec![
        build(&reg, "TSLS", "tsls", spec(&wrong)),
        build(&reg, "TS", "two-stage", spec(&wrong).with_exposure(probit.clone())),
        build(
            &reg,
            "LE-y-c",
            "loc-eff-y",
            spec(&correct).with_exposure(probit.clone()),
        ),
        build(&reg, "LE-y-m", "loc-eff-y", spec(&wrong).with_exposure(probit.clone())),
        build(
            &reg,
            "DR-cc",
            "loc-eff-dr",
            spec(&correct).with_exposure(probit.clone()).with_iv(iv.clone()),
        ),
        build(
            &reg,
            "DR-cm",
            "loc-eff-dr",
            spec(&wrong).with_exposure(probit).with_iv(iv.clone()),
        ),
        build(
            &reg,
            "DR-mm",
            "loc-eff-dr",
            spec(&wrong).with_exposure(linear).with_iv(iv),
        ),
    ]
}

/// Estimators of the effect-modification design, `m(C;psi) = psi_0 + psi_1 V`.
pub fn effectmod_panel() -> Vec<NamedEstimator> {
    let reg = Registry::standard();
    let effect = EffectForm::Linear(basis("1, v"));
    let correct = basis("1, v, v^2");
    let wrong = basis("1, v");
    let linear_main = ExposureSpec::new(ExposureLink::Identity, basis("1, z, v"));
    let exposure_correct = ExposureSpec::new(ExposureLink::Identity, basis("1, z, v, z*v, v^2"));
    let iv = IvSpec::Logistic(basis("1, v"));
    let spec = |outcome: &BasisSpec| {
        ModelSpec::new(outcome.clone())
            .with_effect(effect.clone())
            .with_instruments(basis("z, z*v"))
    };
    vec![
        build(&reg, "TSLS-c", "tsls", spec(&correct)),
        build(&reg, "TSLS-m", "tsls", spec(&wrong)),
        build(
            &reg,
            "TS-c",
            "two-stage",
            spec(&correct).with_exposure(linear_main.clone()),
        ),
        build(&reg, "TS-m", "two-stage", spec(&wrong).with_exposure(linear_main)),
        build(
            &reg,
            "LE-y-c",
            "loc-eff-y",
            spec(&correct).with_exposure(exposure_correct.clone()),
        ),
        build(
            &reg,
            "DR-cc",
            "loc-eff-dr",
            spec(&correct).with_exposure(exposure_correct).with_iv(iv),
        ),
    ]
}

/// EEM and the unadjusted G-estimator (`e = Z`, `m_y = 0`) under the known
/// instrument law `P(Z=1|V) = expit(-1 + V/2)`.
pub fn known_law_panel() -> Vec<NamedEstimator> {
    let reg = Registry::standard();
    let law_basis = basis("1, v");
    let gamma = vec![-1.0, 0.5];
    let known = IvSpec::KnownLogistic {
        basis: law_basis.clone(),
        gamma: gamma.clone(),
    };
    let eem = build(
        &reg,
        "EEM",
        "eem",
        ModelSpec::new(basis("1, v"))
            .with_iv(known)
            .with_index_basis(basis("1, v")),
    );
    let law = IvModel::known_logistic(law_basis, DVector::from_vec(gamma)).expect("known law is valid");
    let unadjusted: Arc<dyn Estimator> = Arc::new(FnEstimator::new("unadjusted", move |data| {
        g_estimate(
            data,
            &IndexFunction::RawInstruments,
            &OutcomeModel::zero(),
            &law,
            &EffectForm::Constant,
            Update::FullSolve,
            None,
        )
    }));
    vec![eem, NamedEstimator::new("Unadjusted", unadjusted)]
}
