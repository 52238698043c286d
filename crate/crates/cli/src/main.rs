mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ivrobust::dataset::{load_csv, write_csv, ColumnMapping};
use ivrobust::estimators::{EstimateResult, Update};
use ivrobust::inference::bootstrap_ci;
use ivrobust::models::ExposureLink;
use ivrobust::registry::{NamedEstimator, Registry};
use ivrobust::replicate::{self, table1_grid, Target, DEFAULT_SEED};
use ivrobust::simlab::panels::{effectmod_panel, known_law_panel, sim_panel, table1_panel};
use ivrobust::simlab::{run_monte_carlo, to_csv, Generator, MonteCarloReport, ScenarioConfig, SCHEMA_VERSION};
use ivrobust::Error;
use serde::Serialize;
use serde_json::json;

use config::{InferenceChoice, IvKind, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;
const EXIT_GATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ivrobust",
    version,
    about = "Robust instrumental-variable estimation and simulation"
)]
struct Cli {
    /// Master seed for simulation and bootstrap streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path (file for fit/simulate, stem for benchmark, directory for replicate).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Fit one estimator to a CSV dataset.
    Fit(FitArgs),
    /// Write one generated dataset as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo grid and write bias/SD summaries.
    Benchmark(BenchmarkArgs),
    /// Reproduce a published table or figure and check it against tolerances.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row.
    data: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    y: Option<String>,
    #[arg(long)]
    x: Option<String>,
    /// Instrument column; repeat for several.
    #[arg(long)]
    z: Vec<String>,
    /// Covariate column; repeat for several.
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// Effect-modifier basis such as "1, v"; omitted means a constant effect.
    #[arg(long)]
    effect: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    instruments: Option<String>,
    #[arg(long)]
    exposure: Option<String>,
    #[arg(long, value_enum)]
    exposure_link: Option<LinkArg>,
    #[arg(long)]
    iv: Option<String>,
    #[arg(long, value_enum)]
    iv_model: Option<IvKind>,
    #[arg(long)]
    index: Option<String>,
    #[arg(long, value_enum)]
    update: Option<UpdateArg>,
    #[arg(long, value_enum)]
    inference: Option<InferenceChoice>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Identity,
    Logit,
    Probit,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    OneStep,
    FullSolve,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorArg {
    Sim1,
    Sim2,
    Effectmod,
    Table1,
    Extreme,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ly: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lz: f64,
    #[arg(long, default_value_t = replicate::SAMPLE_SIZE)]
    n: usize,
}

impl ScenarioArgs {
    fn generator(&self) -> Option<Generator> {
        let (lx, ly, lz) = (self.lx, self.ly, self.lz);
        self.generator.map(|g| match g {
            GeneratorArg::Sim1 => Generator::Sim1,
            GeneratorArg::Sim2 => Generator::Sim2,
            GeneratorArg::Effectmod => Generator::EffectMod,
            GeneratorArg::Table1 => Generator::Table1 { lx, ly, lz },
            GeneratorArg::Extreme => Generator::Extreme { lx, ly, lz },
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PanelArg {
    Table1,
    Sim,
    Effectmod,
    KnownLaw,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Run every row of the table1 design grid.
    #[arg(long)]
    table1_grid: bool,
    /// Estimator panel; defaults to the one matching the generator.
    #[arg(long, value_enum)]
    panel: Option<PanelArg>,
    /// Comma-separated panel labels to keep.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
}

#[derive(Args)]
struct ReplicateArgs {
    /// One of table1, fig1, fig2, fig3.
    target: String,
    #[arg(long, default_value_t = replicate::AUDIT_THRESHOLD)]
    reps: usize,
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    error: serde_json::Value,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_estimation_failure() {
            EXIT_ESTIMATION
        } else {
            EXIT_CONFIG
        };
        let mut error = json!({ "kind": e.kind(), "message": e.to_string() });
        if let Error::UnknownEstimator { valid, .. } = &e {
            error["valid"] = json!(valid.split(", ").collect::<Vec<_>>());
        }
        Failure { code, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let doc = json!({ "schema_version": SCHEMA_VERSION, "error": f.error });
            eprintln!("{}", serde_json::to_string(&doc).expect("error serializes"));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let mut base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        base.seed = cli.seed;
    }
    if cli.out.is_some() {
        base.out = cli.out.clone();
    }
    let seed = base.seed.unwrap_or(DEFAULT_SEED);
    match cli.command {
        Command::Fit(args) => fit(base.overlay(fit_overrides(args)), seed),
        Command::Simulate(args) => simulate(&args, seed, base.out.as_deref()),
        Command::Benchmark(args) => benchmark(&args, seed, base.out.as_deref()),
        Command::Replicate(args) => replicate_target(&args, seed, base.out.as_deref()),
    }
}

fn fit_overrides(a: FitArgs) -> RunConfig {
    let columns = if a.y.is_some() || a.x.is_some() || !a.z.is_empty() {
        Some(ColumnMapping {
            y: a.y.unwrap_or_default(),
            x: a.x.unwrap_or_default(),
            z: a.z,
            covariates: a.covariates,
        })
    } else {
        None
    };
    RunConfig {
        data: a.data,
        columns,
        estimator: a.estimator,
        effect_basis: a.effect,
        outcome_basis: a.outcome,
        instrument_basis: a.instruments,
        exposure_link: a.exposure_link.map(|l| match l {
            LinkArg::Identity => ExposureLink::Identity,
            LinkArg::Logit => ExposureLink::Logit,
            LinkArg::Probit => ExposureLink::Probit,
        }),
        exposure_basis: a.exposure,
        iv_model: a.iv_model,
        iv_basis: a.iv,
        index_basis: a.index,
        update: a.update.map(|u| match u {
            UpdateArg::OneStep => Update::OneStep,
            UpdateArg::FullSolve => Update::FullSolve,
        }),
        inference: a.inference,
        resamples: a.resamples,
        level: a.level,
        seed: None,
        out: None,
    }
}

#[derive(Serialize)]
struct Interval {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    schema_version: u32,
    estimator: &'a str,
    psi_hat: Vec<f64>,
    beta_hat: Vec<f64>,
    se: Option<Vec<f64>>,
    ci: Option<Interval>,
    inference: InferenceChoice,
    level: f64,
    diagnostics: &'a ivrobust::estimators::Diagnostics,
    nuisance: std::collections::BTreeMap<String, Vec<f64>>,
}

fn fit(config: RunConfig, seed: u64) -> Result<u8, Failure> {
    let path = config
        .data
        .clone()
        .ok_or_else(|| Error::Spec("no dataset given".into()))?;
    let name = config.estimator()?.to_string();
    let spec = config.model_spec()?;
    let estimator = Registry::standard().build(&name, &spec)?;
    let data = load_csv(&path, config.columns()?)?;
    let inference = config.inference.unwrap_or_default();
    let result: EstimateResult = estimator.estimate(&data)?;
    let vec = |v: &ivrobust::nalgebra::DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    let (se, ci) = match inference {
        InferenceChoice::None => (None, None),
        InferenceChoice::Sandwich => (
            result.se.as_ref().map(vec),
            result.ci.as_ref().map(|(l, u)| Interval {
                lower: vec(l),
                upper: vec(u),
            }),
        ),
        InferenceChoice::Bootstrap => {
            let resamples = config.resamples.unwrap_or(1000);
            let boot = bootstrap_ci(&data, |d| estimator.psi(d), resamples, spec.level, seed)?;
            (
                Some(boot.se),
                Some(Interval {
                    lower: boot.ci_lower,
                    upper: boot.ci_upper,
                }),
            )
        }
    };
    let output = FitOutput {
        schema_version: SCHEMA_VERSION,
        estimator: &name,
        psi_hat: vec(&result.psi_hat),
        beta_hat: vec(&result.beta_hat),
        se,
        ci,
        inference,
        level: spec.level,
        diagnostics: &result.diagnostics,
        nuisance: result.nuisance.summary(),
    };
    let text = serde_json::to_string_pretty(&output).expect("fit output serializes");
    emit(&text, config.out.as_deref())?;
    Ok(0)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(Error::from)?;
            }
            std::fs::write(path, format!("{text}\n")).map_err(Error::from)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(Error::from)?;
        }
    }
    Ok(())
}

fn simulate(args: &SimulateArgs, seed: u64, out: Option<&Path>) -> Result<u8, Failure> {
    let generator = args
        .scenario
        .generator()
        .ok_or_else(|| Error::Spec("--generator is required".into()))?;
    let out = out.ok_or_else(|| Error::Spec("--out is required for simulate".into()))?;
    let sim = generator.generate(args.scenario.n, seed)?;
    write_csv(&sim.dataset, out)?;
    Ok(0)
}

fn default_panel(generator: Generator) -> PanelArg {
    match generator {
        Generator::Sim1 | Generator::Sim2 => PanelArg::Sim,
        Generator::EffectMod => PanelArg::Effectmod,
        Generator::Table1 { .. } | Generator::Extreme { .. } => PanelArg::Table1,
    }
}

fn panel(choice: PanelArg, keep: Option<&str>) -> Result<Vec<NamedEstimator>, Failure> {
    let all = match choice {
        PanelArg::Table1 => table1_panel(),
        PanelArg::Sim => sim_panel(),
        PanelArg::Effectmod => effectmod_panel(),
        PanelArg::KnownLaw => known_law_panel(),
    };
    let Some(keep) = keep else { return Ok(all) };
    let wanted: Vec<&str> = keep.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let labels: Vec<String> = all.iter().map(|e| e.label.clone()).collect();
    if let Some(bad) = wanted.iter().find(|w| !labels.iter().any(|l| l == *w)) {
        return Err(Error::UnknownEstimator {
            name: bad.to_string(),
            valid: labels.join(", "),
        }
        .into());
    }
    Ok(all.into_iter().filter(|e| wanted.contains(&e.label.as_str())).collect())
}

fn benchmark(args: &BenchmarkArgs, seed: u64, out: Option<&Path>) -> Result<u8, Failure> {
    let generators: Vec<Generator> = if args.table1_grid {
        table1_grid()
            .into_iter()
            .map(|(lx, ly, lz)| Generator::Table1 { lx, ly, lz })
            .collect()
    } else {
        vec![args
            .scenario
            .generator()
            .ok_or_else(|| Error::Spec("give --generator or --table1-grid".into()))?]
    };
    let choice = args.panel.unwrap_or_else(|| default_panel(generators[0]));
    let estimators = panel(choice, args.estimators.as_deref())?;
    let reports = generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            run_monte_carlo(
                &ScenarioConfig::new(*g, args.scenario.n, seed.wrapping_add(i as u64), args.reps),
                &estimators,
            )
        })
        .collect::<ivrobust::Result<Vec<MonteCarloReport>>>()?;
    write_report_files(&reports, out.unwrap_or(Path::new("benchmark")))?;
    print!("{}", to_csv(&reports));
    Ok(0)
}

fn write_report_files(reports: &[MonteCarloReport], stem: &Path) -> Result<(), Failure> {
    ivrobust::simlab::write_reports(reports, stem)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

fn replicate_target(args: &ReplicateArgs, seed: u64, out: Option<&Path>) -> Result<u8, Failure> {
    let target = Target::parse(&args.target)?;
    let report = replicate::run(target, args.reps, seed)?;
    let dir = out.unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    write_report_files(&report.reports, &dir.join(target.name()))?;
    let gates = serde_json::to_string_pretty(&json!({
        "schema_version": SCHEMA_VERSION,
        "replication": &report,
    }))
    .expect("gate report serializes");
    std::fs::write(dir.join(format!("{}_gates.json", target.name())), format!("{gates}\n")).map_err(Error::from)?;

    let mut stdout = std::io::stdout().lock();
    let mut line = |s: String| writeln!(stdout, "{s}").map_err(Error::from);
    line(format!(
        "{} (reps={}, n={}, seed={})",
        target.name(),
        report.reps,
        report.n,
        report.seed
    ))?;
    for w in &report.warnings {
        line(format!("warning: {w}"))?;
    }
    for c in &report.checks {
        let status = match c.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "----",
        };
        line(format!(
            "{status}  {:<48} value={:<10} range=[{}, {}]",
            c.label,
            fmt_opt(c.value),
            c.lower.map_or("-inf".into(), |v| v.to_string()),
            c.upper.map_or("inf".into(), |v| v.to_string()),
        ))?;
    }
    match report.verdict {
        Some(false) => {
            let failing: Vec<&str> = report.failing().iter().map(|c| c.label.as_str()).collect();
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "error": { "kind": "tolerance", "message": "acceptance tolerances violated", "failing": failing },
            });
            eprintln!("{}", serde_json::to_string(&doc).expect("error serializes"));
            Ok(EXIT_GATE)
        }
        _ => Ok(0),
    }
}
