//! End-to-end runs: wind history to uncertainty sets, robust commitment,
//! dispatch prices and settlement.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{load_case, pjm5, CaseError, MarketCase};
use crate::ccg::{solve_rscuc, trace_csv, CcgError, CcgOptions, RucSolution};
use crate::copula::{self, CopulaError, CopulaModel};
use crate::formulation::{ModelVariant, UncertaintySets};
use crate::history::{synthetic_history, HistoryError, SynthConfig, WindHistory};
use crate::imeus::{
    box_around, error_box, evaluate_boxes, evaluate_imeus, integrity_index, optimize_od, BoxSet, CountMethod, Imeus,
    ImeusError, OdSweep, SetEvaluation, SweepOptions, WindSet,
};
use crate::pricing::{
    kkt_crosscheck, price_report, prices_csv, price_text, settle, settlement_csv, solve_rsced, KktCheck, PriceReport,
    PricingError, Rsced, SettlementReport,
};
use crate::solver::{backend_from_name, SolverError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Case(#[from] CaseError),
    #[error("{0}")]
    History(#[from] HistoryError),
    #[error("copula: {0}")]
    Copula(#[from] CopulaError),
    #[error("uncertainty set: {0}")]
    Set(#[from] ImeusError),
    #[error("{0}")]
    Ccg(#[from] CcgError),
    #[error("pricing: {0}")]
    Pricing(#[from] PricingError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMethod {
    Box,
    Ellipsoid,
    Imeus,
}

impl SetMethod {
    pub const ALL: [SetMethod; 3] = [SetMethod::Box, SetMethod::Ellipsoid, SetMethod::Imeus];

    pub fn name(self) -> &'static str {
        match self {
            SetMethod::Box => "box",
            SetMethod::Ellipsoid => "ellipsoid",
            SetMethod::Imeus => "imeus",
        }
    }
}

impl FromStr for SetMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "box" => Ok(SetMethod::Box),
            "ellipsoid" => Ok(SetMethod::Ellipsoid),
            "imeus" => Ok(SetMethod::Imeus),
            other => Err(format!("unknown set method `{other}` (box, ellipsoid, imeus)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub backend: String,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { backend: "highs".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Case JSON; the bundled 5-bus case when absent.
    pub case: Option<PathBuf>,
    /// Wind history CSV; a synthetic history when absent.
    pub history: Option<PathBuf>,
    pub alpha: f64,
    pub k: f64,
    /// Wind hours held at the forecast.
    pub gamma_w: usize,
    /// Load hours allowed to deviate.
    pub gamma_d: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub variant: String,
    pub method: SetMethod,
    /// Fixed subset dimension; chosen by the sweep when absent.
    pub od: Option<usize>,
    pub seed: u64,
    /// Day-ahead trajectories drawn per forecast.
    pub n_samples: usize,
    /// Leading history days used for fitting; the rest are held out.
    pub n_train: usize,
    /// Held-out days used by the subset-dimension sweep.
    pub sweep_days: usize,
    /// Held-out days used for coverage and width tables.
    pub eval_days: usize,
    pub n_mc: usize,
    pub synth: SynthConfig,
    pub solver: SolverConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: None,
            history: None,
            alpha: 0.9,
            k: 0.3,
            gamma_w: 0,
            gamma_d: 24,
            epsilon: 1.0,
            max_iter: 20,
            variant: "model1".into(),
            method: SetMethod::Imeus,
            od: None,
            seed: 1,
            n_samples: 1000,
            n_train: 300,
            sweep_days: 30,
            eval_days: 60,
            n_mc: 20_000,
            synth: SynthConfig { days: 360, ..SynthConfig::default() },
            solver: SolverConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn variant(&self) -> Result<ModelVariant, PipelineError> {
        ModelVariant::from_name(&self.variant)
            .ok_or_else(|| PipelineError::Config(format!("unknown variant `{}` (model1, model2, model3)", self.variant)))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.variant()?;
        backend_from_name(&self.solver.backend)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.k) {
            return Err(PipelineError::Config(format!("k must lie in [0, 1], got {}", self.k)));
        }
        if self.epsilon <= 0.0 {
            return Err(PipelineError::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn ccg_options(&self) -> CcgOptions {
        CcgOptions { epsilon: self.epsilon, max_iter: self.max_iter, ..CcgOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub case: MarketCase,
    pub history: WindHistory,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let case = match &cfg.case {
        Some(p) => load_case(p)?,
        None => pjm5(),
    };
    let history = match &cfg.history {
        Some(p) => WindHistory::load(p)?,
        None => synthetic_history(&cfg.synth),
    };
    if history.horizon != case.horizon {
        return Err(PipelineError::Config(format!(
            "history has {} hours per day, case has {}",
            history.horizon, case.horizon
        )));
    }
    if history.len() <= cfg.n_train {
        return Err(PipelineError::Config(format!(
            "history has {} days; need more than n_train = {} to hold some out",
            history.len(),
            cfg.n_train
        )));
    }
    Ok(Inputs { case, history })
}

/// Fitted model and the held-out days with their day-ahead samples.
pub struct Benchmark {
    pub model: CopulaModel,
    pub train: WindHistory,
    pub test: WindHistory,
    pub capacity: f64,
}

impl Benchmark {
    pub fn new(history: &WindHistory, n_train: usize, capacity: f64) -> Result<Self, PipelineError> {
        let (train, test) = history.split(n_train);
        let model = copula::fit(&train)?;
        Ok(Benchmark { model, train, test, capacity })
    }

    /// Day-ahead samples for the first `days` held-out days.
    pub fn test_samples(&self, days: usize, n: usize, seed: u64) -> Result<Vec<DMatrix<f64>>, PipelineError> {
        self.test
            .days
            .iter()
            .take(days)
            .enumerate()
            .map(|(d, day)| Ok(self.model.sample_day_ahead(&day.forecast, n, seed.wrapping_add(d as u64), self.capacity)?))
            .collect()
    }

    pub fn test_actuals(&self, days: usize) -> Vec<Vec<f64>> {
        self.test.days.iter().take(days).map(|d| d.actual.clone()).collect()
    }

    /// Per-hour error half-widths at quantile `alpha` of the training days.
    pub fn error_half_widths(&self, alpha: f64) -> Vec<f64> {
        let f: Vec<Vec<f64>> = self.train.days.iter().map(|d| d.forecast.clone()).collect();
        let a: Vec<Vec<f64>> = self.train.days.iter().map(|d| d.actual.clone()).collect();
        error_box(&f, &a, alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: SetMethod,
    pub alpha: f64,
    pub od: usize,
    pub coverage: f64,
    pub avg_width: f64,
}

/// Held-out coverage and width of one method at confidence `alpha`.
pub fn evaluate_method(
    bench: &Benchmark,
    samples: &[DMatrix<f64>],
    method: SetMethod,
    alpha: f64,
    od: usize,
) -> Result<MethodRow, PipelineError> {
    method_row(bench, samples, method, alpha, od, true)
}

/// Held-out coverage only; `avg_width` is left as NaN.
pub fn method_coverage(
    bench: &Benchmark,
    samples: &[DMatrix<f64>],
    method: SetMethod,
    alpha: f64,
    od: usize,
) -> Result<MethodRow, PipelineError> {
    method_row(bench, samples, method, alpha, od, false)
}

fn method_row(
    bench: &Benchmark,
    samples: &[DMatrix<f64>],
    method: SetMethod,
    alpha: f64,
    od: usize,
    width: bool,
) -> Result<MethodRow, PipelineError> {
    let days = samples.len();
    let actuals = bench.test_actuals(days);
    let t = bench.model.horizon;
    let imeus = |od: usize| -> Result<SetEvaluation, PipelineError> {
        let sets = samples.iter().map(|s| Imeus::fit(s, alpha, od)).collect::<Result<Vec<Imeus>, _>>()?;
        if width {
            Ok(evaluate_imeus(&sets, &actuals)?)
        } else {
            Ok(SetEvaluation { coverage: integrity_index(&sets, &actuals), avg_width: f64::NAN })
        }
    };
    let (ev, od) = match method {
        SetMethod::Box => {
            let half = bench.error_half_widths(alpha);
            let boxes: Vec<BoxSet> =
                bench.test.days.iter().take(days).map(|d| box_around(&d.forecast, &half, bench.capacity)).collect();
            (evaluate_boxes(&boxes, &actuals), 1)
        }
        SetMethod::Ellipsoid => (imeus(t)?, t),
        SetMethod::Imeus => (imeus(od)?, od),
    };
    Ok(MethodRow { method, alpha, od, coverage: ev.coverage, avg_width: ev.avg_width })
}

/// Evaluate `method` at the confidence whose held-out coverage is closest to
/// `target`, by bisection on the confidence level.
pub fn matched_coverage(
    bench: &Benchmark,
    samples: &[DMatrix<f64>],
    method: SetMethod,
    od: usize,
    target: f64,
) -> Result<MethodRow, PipelineError> {
    let (mut lo, mut hi) = (0.3f64, 0.9999f64);
    let mut best = method_coverage(bench, samples, method, 0.9, od)?;
    for _ in 0..18 {
        let mid = 0.5 * (lo + hi);
        let row = method_coverage(bench, samples, method, mid, od)?;
        if (row.coverage - target).abs() < (best.coverage - target).abs() {
            best = row.clone();
        }
        if row.coverage < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (best.coverage - target).abs() < 0.002 {
            break;
        }
    }
    evaluate_method(bench, samples, method, best.alpha, od)
}

/// Rows at the configured confidence, then the box and full ellipsoid
/// recalibrated to the IMEUS coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub nominal: Vec<MethodRow>,
    pub matched: Vec<MethodRow>,
}

pub fn method_table(cfg: &RunConfig, bench: &Benchmark, od: usize) -> Result<MethodTable, PipelineError> {
    let samples = bench.test_samples(cfg.eval_days, cfg.n_samples, cfg.seed.wrapping_add(20_000))?;
    let nominal = SetMethod::ALL
        .iter()
        .map(|m| evaluate_method(bench, &samples, *m, cfg.alpha, od))
        .collect::<Result<Vec<_>, _>>()?;
    let target = nominal[2].coverage;
    let matched = [SetMethod::Box, SetMethod::Ellipsoid]
        .iter()
        .map(|m| matched_coverage(bench, &samples, *m, od, target))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MethodTable { nominal, matched })
}

pub fn methods_csv(table: &MethodTable) -> String {
    let mut s = String::from("basis,method,alpha,od,coverage,avg_width_mw\n");
    let rows = table.nominal.iter().map(|r| ("nominal", r)).chain(table.matched.iter().map(|r| ("matched", r)));
    for (basis, r) in rows {
        s.push_str(&format!("{basis},{},{},{},{},{}\n", r.method.name(), r.alpha, r.od, r.coverage, r.avg_width));
    }
    s
}

/// Subset-dimension sweep on held-out days.
pub fn sweep(cfg: &RunConfig, bench: &Benchmark) -> Result<OdSweep, PipelineError> {
    let samples = bench.test_samples(cfg.sweep_days, cfg.n_samples, cfg.seed.wrapping_add(10_000))?;
    let actuals = bench.test_actuals(cfg.sweep_days);
    let opts = SweepOptions { k: cfg.k, alpha: cfg.alpha, n_mc: cfg.n_mc, seed: cfg.seed, count: CountMethod::Adaptive, ods: None };
    Ok(optimize_od(&samples, &actuals, &opts)?)
}

/// Configured subset dimension, or the sweep optimum with its table.
pub fn resolve_od(cfg: &RunConfig, bench: &Benchmark) -> Result<(usize, Option<OdSweep>), PipelineError> {
    match cfg.od {
        Some(od) => Ok((od, None)),
        None => {
            let s = sweep(cfg, bench)?;
            Ok((s.best_od, Some(s)))
        }
    }
}

pub struct SetBuild {
    pub sets: UncertaintySets,
    pub sweep: Option<OdSweep>,
    pub od: Option<usize>,
    pub bench: Benchmark,
}

/// Wind sets for every farm of the case plus the budgeted load boxes.
pub fn build_sets(cfg: &RunConfig, inputs: &Inputs) -> Result<SetBuild, PipelineError> {
    let case = &inputs.case;
    let capacity = case.wind_farms.iter().map(|w| w.capacity).fold(0.0, f64::max);
    let bench = Benchmark::new(&inputs.history, cfg.n_train, capacity)?;
    let mut sweep_out = None;
    let od = match cfg.method {
        SetMethod::Imeus => {
            let (od, s) = resolve_od(cfg, &bench)?;
            sweep_out = s;
            Some(od)
        }
        SetMethod::Ellipsoid => Some(case.horizon),
        SetMethod::Box => None,
    };
    let mut wind = Vec::new();
    for (j, w) in case.wind_farms.iter().enumerate() {
        let set = match cfg.method {
            SetMethod::Box => {
                let half = bench.error_half_widths(cfg.alpha);
                WindSet::Box { set: box_around(&w.forecast, &half, w.capacity), forecast: w.forecast.clone(), gamma: cfg.gamma_w }
            }
            SetMethod::Ellipsoid | SetMethod::Imeus => {
                let samples = bench.model.sample_day_ahead(&w.forecast, cfg.n_samples, cfg.seed.wrapping_add(j as u64), w.capacity)?;
                let od = od.unwrap();
                WindSet::Imeus(Imeus::fit(&samples, cfg.alpha, od)?.with_budget(&w.forecast, w.capacity, cfg.gamma_w)?)
            }
        };
        wind.push(set);
    }
    let sets = UncertaintySets { wind, load: UncertaintySets::case_loads(case, cfg.gamma_d.min(case.horizon)) };
    Ok(SetBuild { sets, sweep: sweep_out, od, bench })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub method: SetMethod,
    pub od: Option<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub lower_bound: f64,
    pub rsced_objective: f64,
    pub energy_cost: f64,
    pub reserve_cost: f64,
    /// Σ|ΔP| over units and hours (MW).
    pub reserve_capacity: f64,
    pub transition_cost: f64,
    pub kkt_max_residual: f64,
    pub complementarity: f64,
    pub settlement_imbalance: f64,
    pub min_unit_profit: f64,
    pub wall_time_s: f64,
}

pub struct RunOutput {
    pub solution: RucSolution,
    pub rsced: Rsced,
    pub prices: PriceReport,
    pub settlement: SettlementReport,
    pub kkt: KktCheck,
    pub summary: Summary,
}

/// Robust commitment, dispatch at the worst case, prices and settlement.
pub fn run_solve(
    cfg: &RunConfig,
    case: &MarketCase,
    sets: &UncertaintySets,
    od: Option<usize>,
) -> Result<RunOutput, PipelineError> {
    let started = Instant::now();
    let variant = cfg.variant()?;
    let solution = solve_rscuc(case, sets, variant, &cfg.ccg_options())?;
    let rsced = solve_rsced(case, variant, &solution.commitment, &solution.worst_case.realization)?;
    let prices = price_report(&rsced, case);
    let settlement = settle(&prices.lmp, &prices.ulmp, &rsced, case);
    let kkt = kkt_crosscheck(&rsced, case);
    let summary = Summary {
        variant: variant.name(),
        method: cfg.method,
        od,
        converged: solution.converged,
        iterations: solution.iterations,
        objective: solution.objective,
        lower_bound: solution.lower_bound,
        rsced_objective: rsced.objective,
        energy_cost: rsced.energy_cost,
        reserve_cost: rsced.reserve_cost,
        reserve_capacity: rsced.reserve.iter().flatten().map(|r| r.abs()).sum(),
        transition_cost: solution.commitment.transition_cost(case),
        kkt_max_residual: kkt.max_residual,
        complementarity: rsced.complementarity,
        settlement_imbalance: settlement.imbalance(),
        min_unit_profit: settlement.units.iter().map(|u| u.profit).fold(f64::INFINITY, f64::min),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { solution, rsced, prices, settlement, kkt, summary })
}

pub fn dispatch_csv(out: &RunOutput, case: &MarketCase) -> String {
    let mut s = String::from("unit,hour,on,p_mw,dp_mw\n");
    for (i, u) in case.units.iter().enumerate() {
        for t in 0..case.horizon {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                u.name,
                t + 1,
                u8::from(out.solution.commitment.on[i][t]),
                out.rsced.dispatch[i][t],
                out.rsced.reserve[i][t]
            ));
        }
    }
    s
}

pub fn unit_profit_csv(out: &RunOutput) -> String {
    let mut s = String::from("unit,hour,profit\n");
    for u in &out.settlement.units {
        for (t, p) in u.hourly_profit.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", u.name, t + 1, p));
        }
        s.push_str(&format!("{},total,{}\n", u.name, u.profit));
    }
    s
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|source| PipelineError::Io { path: p.display().to_string(), source })?;
    Ok(p)
}

/// Write every artifact of a run; returns the paths written.
pub fn write_run(dir: &Path, out: &RunOutput, case: &MarketCase) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = vec![
        write_file(dir, "ccg_trace.csv", &trace_csv(&out.solution.trace))?,
        write_file(dir, "worst_case.json", &out.solution.worst_case.to_json())?,
        write_file(dir, "dispatch.csv", &dispatch_csv(out, case))?,
        write_file(dir, "prices.csv", &prices_csv(&out.prices, case))?,
        write_file(dir, "prices.txt", &price_text(&out.prices, case))?,
        write_file(dir, "settlement.csv", &settlement_csv(&out.settlement))?,
        write_file(dir, "unit_profit.csv", &unit_profit_csv(out))?,
    ];
    let kkt = serde_json::to_string_pretty(&out.kkt).expect("kkt table serialises");
    files.push(write_file(dir, "kkt.json", &kkt)?);
    let summary = serde_json::to_string_pretty(&out.summary).expect("summary serialises");
    files.push(write_file(dir, "summary.json", &summary)?);
    Ok(files)
}

/// One finished run of a method × variant comparison.
pub struct ComparedRun {
    pub label: String,
    pub output: RunOutput,
}

pub fn compare_csv(runs: &[ComparedRun]) -> String {
    let mut s = String::from(
        "run,method,variant,od,converged,iterations,objective,energy_cost,reserve_cost,transition_cost,reserve_capacity_mw\n",
    );
    for r in runs {
        let m = &r.output.summary;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            m.method.name(),
            m.variant,
            m.od.map(|o| o.to_string()).unwrap_or_default(),
            m.converged,
            m.iterations,
            m.objective,
            m.energy_cost,
            m.reserve_cost,
            m.transition_cost,
            m.reserve_capacity
        ));
    }
    s
}

pub fn unit_profits_csv(runs: &[ComparedRun]) -> String {
    let mut s = String::from("run,unit,hour,profit\n");
    for r in runs {
        for u in &r.output.settlement.units {
            for (t, p) in u.hourly_profit.iter().enumerate() {
                s.push_str(&format!("{},{},{},{}\n", r.label, u.name, t + 1, p));
            }
            s.push_str(&format!("{},{},day,{}\n", r.label, u.name, u.profit));
        }
    }
    s
}

pub fn market_totals_csv(runs: &[ComparedRun]) -> String {
    let mut s = String::from("run,load_payments,generator_credits,wind_net_credits,congestion_rent,ulmp_cash_flow,imbalance\n");
    for r in runs {
        let st = &r.output.settlement;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            st.load_payments,
            st.generator_credits,
            st.wind_net_credits,
            st.congestion_rent,
            st.ulmp_cash_flow,
            st.imbalance()
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.alpha, c.k, c.gamma_d, c.gamma_w), (0.9, 0.3, 24, 0));
        assert_eq!(c.epsilon, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn config_overrides_and_unknown_keys() {
        let c = RunConfig::from_json(r#"{"alpha": 0.8, "variant": "model3", "solver": {"backend": "highs"}}"#).unwrap();
        assert_eq!(c.alpha, 0.8);
        assert_eq!(c.variant().unwrap(), ModelVariant::MODEL3);
        assert!(RunConfig::from_json(r#"{"alpah": 0.8}"#).is_err());
        let bad = RunConfig { solver: SolverConfig { backend: "gurobi".into() }, ..RunConfig::default() };
        assert!(matches!(bad.validate(), Err(PipelineError::Solver(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in SetMethod::ALL {
            assert_eq!(m.name().parse::<SetMethod>().unwrap(), m);
        }
    }

    #[test]
    fn box_method_builds_box_sets() {
        let cfg = RunConfig { method: SetMethod::Box, synth: SynthConfig { days: 320, ..SynthConfig::default() }, ..RunConfig::default() };
        let inputs = load_inputs(&cfg).unwrap();
        let b = build_sets(&cfg, &inputs).unwrap();
        assert!(matches!(b.sets.wind[0], WindSet::Box { .. }));
        assert!(b.sweep.is_none());
    }
}
