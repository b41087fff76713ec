mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use ulmp_core::ccg::enumerate::check_equivalence;
use ulmp_core::ccg::CcgError;
use ulmp_core::imeus::{sweep_csv, ImeusError, WindSet};
use ulmp_core::pipeline::{
    build_sets, compare_csv, load_inputs, market_totals_csv, method_table, methods_csv, resolve_od, run_solve,
    unit_profits_csv, write_file, write_run, Benchmark, ComparedRun, PipelineError, RunConfig, SetMethod,
};
use ulmp_core::pricing::PricingError;
use ulmp_core::solver::SolverError;

use manifest::Manifest;

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "ulmp", version, about = "Robust day-ahead clearing with wind uncertainty sets and uncertainty prices")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the forecast-conditioned copula and write it as JSON.
    Fit(RunArgs),
    /// Build wind uncertainty sets, the subset-dimension sweep and the method table.
    BuildSet(RunArgs),
    /// Robust commitment, worst-case dispatch, prices and settlement.
    Solve(RunArgs),
    /// Run every requested set method against every model variant.
    Compare(CompareArgs),
    /// Check the CCG solver against exhaustive enumeration on tiny instances.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case JSON (default: bundled 5-bus case).
    #[arg(long)]
    case: Option<PathBuf>,
    /// Wind history CSV with columns day,hour,forecast_mw,actual_mw (default: synthetic).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of coverage in the subset-dimension index.
    #[arg(long)]
    k: Option<f64>,
    /// Wind hours held at the forecast.
    #[arg(long)]
    gamma_w: Option<usize>,
    /// Load hours allowed to deviate.
    #[arg(long)]
    gamma_d: Option<usize>,
    /// CCG stopping gap in $.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// model1, model2 or model3.
    #[arg(long)]
    variant: Option<String>,
    /// box, ellipsoid or imeus.
    #[arg(long)]
    method: Option<SetMethod>,
    /// Fixed subset dimension (skips the sweep).
    #[arg(long)]
    od: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    sweep_days: Option<usize>,
    #[arg(long)]
    eval_days: Option<usize>,
    /// Length of the synthetic history in days.
    #[arg(long)]
    synth_days: Option<usize>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
        }
        take!(alpha, k, gamma_w, gamma_d, epsilon, max_iter, variant, method, seed, n_samples, n_train, sweep_days, eval_days, output);
        if self.case.is_some() {
            c.case = self.case.clone();
        }
        if self.history.is_some() {
            c.history = self.history.clone();
        }
        if self.od.is_some() {
            c.od = self.od;
        }
        if let Some(d) = self.synth_days {
            c.synth.days = d;
        }
        if let Some(b) = &self.backend {
            c.solver.backend = b.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Clone)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "box,imeus")]
    methods: Vec<SetMethod>,
    #[arg(long, value_delimiter = ',', default_value = "model1,model2,model3")]
    variants: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct ValidateArgs {
    #[arg(long, default_value_t = 8)]
    instances: u64,
    /// First instance seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative tolerance on the objective.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: exit_code(&e), err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure { code: EXIT_INPUT, err }
    }
}

fn set_code(e: &ImeusError) -> u8 {
    match e {
        ImeusError::Oracle(_) => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

fn solver_code(e: &SolverError) -> u8 {
    match e {
        SolverError::Config(_) => EXIT_INPUT,
        _ => EXIT_SOLVER,
    }
}

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Set(s) => set_code(s),
        PipelineError::Solver(s) => solver_code(s),
        PipelineError::Ccg(c) => match c {
            CcgError::MasterInfeasible | CcgError::Formulation(_) => EXIT_INPUT,
            CcgError::Set(s) => set_code(s),
            CcgError::Solver(s) => solver_code(s),
            CcgError::NotCertified(_) | CcgError::Other(_) => EXIT_SOLVER,
        },
        PipelineError::Pricing(p) => match p {
            PricingError::Formulation(_) => EXIT_INPUT,
            PricingError::Solver(s) => solver_code(s),
            PricingError::Infeasible(_) | PricingError::Status(_) => EXIT_SOLVER,
        },
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Fit(a) => cmd_fit(&a),
        Cmd::BuildSet(a) => cmd_build_set(&a),
        Cmd::Solve(a) => cmd_solve(&a),
        Cmd::Compare(a) => cmd_compare(&a),
        Cmd::Validate(a) => cmd_validate(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_fit(a: &RunArgs) -> Result<u8, Failure> {
    let cfg = a.resolve()?;
    let inputs = load_inputs(&cfg)?;
    let bench = Benchmark::new(&inputs.history, cfg.n_train, inputs.case.wind_farms.iter().map(|w| w.capacity).fold(0.0, f64::max))?;
    let mut m = Manifest::new("fit", &cfg);
    m.add(write_file(&cfg.output, "copula.json", &bench.model.to_json())?);
    m.write(&cfg.output)?;
    info!("fitted {} training days, horizon {}", bench.train.len(), bench.model.horizon);
    Ok(0)
}

fn cmd_build_set(a: &RunArgs) -> Result<u8, Failure> {
    let cfg = a.resolve()?;
    let inputs = load_inputs(&cfg)?;
    let built = build_sets(&cfg, &inputs)?;
    let mut m = Manifest::new("build-set", &cfg);
    for (w, set) in inputs.case.wind_farms.iter().zip(&built.sets.wind) {
        let text = match set {
            WindSet::Imeus(s) => s.to_json(),
            WindSet::Box { set, .. } => serde_json::to_string_pretty(set).context("serialising box set")?,
        };
        m.add(write_file(&cfg.output, &format!("wind_set_{}.json", w.name), &text)?);
    }
    if let Some(s) = &built.sweep {
        m.add(write_file(&cfg.output, "od_sweep.csv", &sweep_csv(s))?);
        info!("subset dimension {} selected", s.best_od);
    }
    let od = match built.od.filter(|_| cfg.method == SetMethod::Imeus) {
        Some(od) => od,
        None => {
            let (od, s) = resolve_od(&cfg, &built.bench)?;
            if let Some(s) = s {
                m.add(write_file(&cfg.output, "od_sweep.csv", &sweep_csv(&s))?);
            }
            od
        }
    };
    let table = method_table(&cfg, &built.bench, od)?;
    m.add(write_file(&cfg.output, "methods.csv", &methods_csv(&table))?);
    for r in table.nominal.iter().chain(&table.matched) {
        info!("{:>9} alpha {:.4}: coverage {:.4}, width {:.2} MW", r.method.name(), r.alpha, r.coverage, r.avg_width);
    }
    m.write(&cfg.output)?;
    Ok(0)
}

fn cmd_solve(a: &RunArgs) -> Result<u8, Failure> {
    let cfg = a.resolve()?;
    let inputs = load_inputs(&cfg)?;
    let built = build_sets(&cfg, &inputs)?;
    let out = run_solve(&cfg, &inputs.case, &built.sets, built.od)?;
    let mut m = Manifest::new("solve", &cfg);
    if let Some(s) = &built.sweep {
        m.add(write_file(&cfg.output, "od_sweep.csv", &sweep_csv(s))?);
    }
    for p in write_run(&cfg.output, &out, &inputs.case)? {
        m.add(p);
    }
    m.write(&cfg.output)?;
    let s = &out.summary;
    info!(
        "objective {:.2} $ (energy {:.2}, reserve {:.2}), {} iterations, gap {:.3e}",
        s.objective,
        s.energy_cost,
        s.reserve_cost,
        s.iterations,
        s.objective - s.lower_bound
    );
    if !s.converged {
        warn!("CCG stopped before reaching the gap tolerance");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_compare(a: &CompareArgs) -> Result<u8, Failure> {
    let cfg = a.run.resolve()?;
    let inputs = load_inputs(&cfg)?;
    let mut jobs = Vec::new();
    for &method in &a.methods {
        let mcfg = RunConfig { method, ..cfg.clone() };
        let built = build_sets(&mcfg, &inputs)?;
        for v in &a.variants {
            let rcfg = RunConfig { variant: v.clone(), output: cfg.output.join(format!("{}_{v}", method.name())), ..mcfg.clone() };
            rcfg.validate()?;
            jobs.push((rcfg, built.sets.clone(), built.od));
        }
    }
    let results: Vec<Result<ComparedRun, Failure>> = jobs
        .par_iter()
        .map(|(rcfg, sets, od)| {
            let out = run_solve(rcfg, &inputs.case, sets, *od)?;
            let mut m = Manifest::new("solve", rcfg);
            for p in write_run(&rcfg.output, &out, &inputs.case)? {
                m.add(p);
            }
            m.write(&rcfg.output)?;
            let label = rcfg.output.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(ComparedRun { label, output: out })
        })
        .collect();
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut m = Manifest::new("compare", &cfg);
    m.add(write_file(&cfg.output, "compare.csv", &compare_csv(&runs))?);
    m.add(write_file(&cfg.output, "unit_profits.csv", &unit_profits_csv(&runs))?);
    m.add(write_file(&cfg.output, "market_totals.csv", &market_totals_csv(&runs))?);
    m.write(&cfg.output)?;
    for r in &runs {
        let s = &r.output.summary;
        info!("{:<16} objective {:>12.2}  reserve {:>10.2}  reserve capacity {:>8.1} MW", r.label, s.objective, s.reserve_cost, s.reserve_capacity);
    }
    if runs.iter().any(|r| !r.output.summary.converged) {
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cmd_validate(a: &ValidateArgs) -> Result<u8, Failure> {
    let mut rows = Vec::new();
    for seed in a.seed..a.seed + a.instances {
        let r = check_equivalence(seed, a.tol).map_err(PipelineError::Ccg)?;
        let fmt = |v: Option<f64>| v.map_or("infeasible".to_string(), |x| format!("{x:.6}"));
        println!(
            "seed {:>3}  T={} units={} buses={}  ccg {:>14}  enumeration {:>14}  rel {:.2e}  {}",
            r.seed,
            r.horizon,
            r.units,
            r.buses,
            fmt(r.ccg),
            fmt(r.enumeration),
            r.rel_error,
            if r.matched { "ok" } else { "MISMATCH" }
        );
        rows.push(r);
    }
    let failed = rows.iter().filter(|r| !r.matched).count();
    if let Some(dir) = &a.output {
        let text = serde_json::to_string_pretty(&rows).context("serialising validation rows")?;
        write_file(dir, "validate.json", &text)?;
    }
    println!("{} of {} instances match", rows.len() - failed, rows.len());
    Ok(if failed == 0 { 0 } else { EXIT_NOT_CONVERGED })
}

