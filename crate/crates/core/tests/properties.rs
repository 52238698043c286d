mod common;

use common::*;
use ivrobust::adaptive::{br_gamma_estimate, br_gamma_with_outcome, eem_objective};
use ivrobust::dataset::{load_csv, write_csv, Dataset};
use ivrobust::models::{IvModel, IvSpec};
use ivrobust::nalgebra::DVector;
use ivrobust::simlab::panels::{effectmod_panel, sim_panel, table1_panel};
use ivrobust::simlab::{run_monte_carlo, to_csv, Generator, ScenarioConfig};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 12,
        ..ProptestConfig::default()
    }
}

fn lambda() -> impl Strategy<Value = (f64, f64, f64)> {
    let l = prop::sample::select(vec![-1.0, 0.0, 1.0]);
    (l.clone(), l.clone(), l)
}

fn transformed(data: &Dataset, a: f64, b0: f64, b1: f64) -> Dataset {
    let v = data.covariates().column(0);
    let y = DVector::from_fn(data.n(), |i, _| a * data.y()[i] + b0 + b1 * v[i]);
    data.with_outcome(y).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn csv_round_trip_is_exact(seed in 0u64..1000, n in 5usize..60) {
        let data = toy(n, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&data, &path).unwrap();
        let back = load_csv(&path, &names()).unwrap();
        prop_assert_eq!(back.y(), data.y());
        prop_assert_eq!(back.x(), data.x());
        prop_assert_eq!(back.z(), data.z());
        prop_assert_eq!(back.covariates(), data.covariates());
    }

    #[test]
    fn estimates_ignore_row_order((lx, ly, lz) in lambda(), seed in 0u64..1000, shift in 1usize..199) {
        let data = Generator::Table1 { lx, ly, lz }.generate(200, seed).unwrap().dataset;
        let order: Vec<usize> = (0..200).map(|i| (i * 7 + shift) % 200).collect();
        let permuted = data.select_rows(&order);
        for e in table1_panel() {
            let (a, b) = (e.estimator.psi(&data), e.estimator.psi(&permuted));
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!(rel_err(a[0], b[0]) <= 1e-8, "{} {} {}", e.label, a[0], b[0]);
            }
        }
    }

    #[test]
    fn eem_objective_is_scale_free_in_alpha(seed in 0u64..1000, a0 in -2.0f64..2.0, a1 in 0.2f64..2.0, c in 0.1f64..10.0) {
        let data = table1(100, seed);
        let b = basis("1, v");
        let iv = IvModel::fit(&data, &IvSpec::Logistic(b.clone())).unwrap();
        let alpha = DVector::from_vec(vec![a0, a1]);
        let beta = DVector::from_vec(vec![0.2, -0.1]);
        let one = eem_objective(&data, &iv, &alpha, &beta, 1.0, &b, &b).unwrap();
        let scaled = eem_objective(&data, &iv, &(&alpha * c), &beta, 1.0, &b, &b).unwrap();
        prop_assert!(rel_err(one, scaled) <= 1e-10);
    }

    #[test]
    fn estimates_scale_with_the_outcome(
        seed in 0u64..1000,
        a in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
        b0 in -2.0f64..2.0,
        b1 in -2.0f64..2.0,
    ) {
        let panels = [
            (table1_panel(), Generator::Table1 { lx: 1.0, ly: -1.0, lz: 0.0 }),
            (sim_panel(), Generator::Sim2),
            (effectmod_panel(), Generator::EffectMod),
        ];
        for (panel, generator) in panels {
            let data = generator.generate(300, seed).unwrap().dataset;
            let moved = transformed(&data, a, b0, b1);
            for e in panel {
                if let (Ok(p), Ok(q)) = (e.estimator.psi(&data), e.estimator.psi(&moved)) {
                    for k in 0..p.len() {
                        prop_assert!((q[k] - a * p[k]).abs() <= 1e-9 * (1.0 + (a * p[k]).abs()), "{} {} {}", e.label, q[k], a * p[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn br_gamma_ignores_the_outcome_model((lx, ly, lz) in lambda(), seed in 0u64..1000, b0 in -5.0f64..5.0, b1 in -5.0f64..5.0) {
        let data = Generator::Table1 { lx, ly, lz }.generate(300, seed).unwrap().dataset;
        let b = basis("1, v");
        let (plain, _) = br_gamma_estimate(&data, &b, &b, &b).unwrap();
        let beta = DVector::from_vec(vec![b0, b1]);
        let (with, _) = br_gamma_with_outcome(&data, &b, &b, &b, Some(&beta)).unwrap();
        prop_assert!((plain.psi_hat[0] - with.psi_hat[0]).abs() <= 1e-10 * (1.0 + plain.psi_hat[0].abs()));
    }

    #[test]
    fn replicate_data_is_independent_of_the_panel(seed in 0u64..1000) {
        let scenario = ScenarioConfig::new(Generator::Sim1, 200, seed, 6);
        let full = run_monte_carlo(&scenario, &sim_panel()).unwrap();
        let subset: Vec<_> = sim_panel().into_iter().filter(|e| e.label == "DR-cc").collect();
        let alone = run_monte_carlo(&scenario, &subset).unwrap();
        prop_assert_eq!(&full.row("DR-cc", 0).unwrap().estimates, &alone.row("DR-cc", 0).unwrap().estimates);
    }

    #[test]
    fn replicate_accounting_adds_up((lx, ly, lz) in lambda(), seed in 0u64..1000) {
        let scenario = ScenarioConfig::new(Generator::Extreme { lx, ly, lz }, 150, seed, 8);
        let report = run_monte_carlo(&scenario, &table1_panel()).unwrap();
        for r in &report.rows {
            prop_assert_eq!(r.outliers_removed + r.failed + r.used, r.reps);
        }
    }
}

#[test]
fn monte_carlo_is_identical_across_thread_pools() {
    let scenario = ScenarioConfig::new(
        Generator::Table1 {
            lx: 1.0,
            ly: 1.0,
            lz: -1.0,
        },
        200,
        5,
        12,
    );
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| to_csv(&[run_monte_carlo(&scenario, &table1_panel()).unwrap()]))
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}
