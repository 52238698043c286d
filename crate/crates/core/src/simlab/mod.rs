//! Simulation laboratory: data generators, the Monte Carlo harness, reports
//! and the estimator panels of each design.

pub mod generators;
pub mod montecarlo;
pub mod panels;
pub mod report;

pub use generators::{gen_effectmod, gen_extreme, gen_sim1, gen_sim2, gen_table1, Generator, SimData};
pub use montecarlo::{remove_outliers, run_monte_carlo, EstimatorSummary, MonteCarloReport, ScenarioConfig};
pub use report::{to_csv, to_json, write_reports, SCHEMA_VERSION};
