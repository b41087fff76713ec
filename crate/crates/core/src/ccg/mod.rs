//! Column-and-constraint generation for the two-stage robust unit commitment.

pub mod enumerate;
pub mod oracle;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::MarketCase;
use crate::formulation::{
    build_ruc, Binaries, Commitment, ConstraintSystem, FormulationError, ModelVariant, Realization, RowKind, UncVar,
    UncertaintySets, Var,
};
use crate::imeus::{ImeusError, WindSet};
use crate::solver::{solve, Sense, SolveRequest, SolverError, Status};

use oracle::{maximize_load, WindOracle};

#[derive(Debug, Error)]
pub enum CcgError {
    #[error("uncertainty set incompatible with case: the master problem is infeasible")]
    MasterInfeasible,
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("uncertainty set: {0}")]
    Set(#[from] ImeusError),
    #[error("{0}")]
    Formulation(#[from] FormulationError),
    #[error("worst case failed certification: {0}")]
    NotCertified(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcgOptions {
    /// Absolute convergence tolerance on UB − LB ($).
    pub epsilon: f64,
    pub max_iter: usize,
    /// Penalty on unserved or spilled energy inside the subproblem ($/MWh).
    pub voll: f64,
    /// Alternation stops when a step gains less than this fraction.
    pub improve_tol: f64,
    pub max_alternations: usize,
    /// Add the "wind low / load high" and opposite starts.
    pub directional_starts: bool,
    pub master_time_limit: Option<f64>,
}

impl Default for CcgOptions {
    fn default() -> Self {
        CcgOptions {
            epsilon: 1.0,
            max_iter: 20,
            voll: 1e4,
            improve_tol: 1e-6,
            max_alternations: 30,
            directional_starts: true,
            master_time_limit: None,
        }
    }
}

/// Certified worst-case realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub realization: Realization,
    /// In-set wind trajectories before pinning.
    pub wind_base: Vec<Vec<f64>>,
    /// Hours pinned to the forecast, per farm.
    pub wind_pins: Vec<Vec<bool>>,
    /// Deviating hours, per load.
    pub load_active: Vec<Vec<bool>>,
    /// Second-stage cost at this realization ($), infinite if infeasible.
    pub value: f64,
}

impl WorstCase {
    /// Check membership in the declared sets.
    pub fn certify(&self, case: &MarketCase, sets: &UncertaintySets) -> Result<(), String> {
        const TOL: f64 = 1e-6;
        for (j, ws) in sets.wind.iter().enumerate() {
            let base = &self.wind_base[j];
            let pins = &self.wind_pins[j];
            if !ws.contains_base(base, TOL) {
                return Err(format!("wind farm {j}: base trajectory outside its set"));
            }
            if pins.iter().filter(|p| **p).count() != ws.gamma() {
                return Err(format!("wind farm {j}: pinned hours differ from the budget"));
            }
            let want = ws.realize(base, pins);
            if want.iter().zip(&self.realization.wind[j]).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(format!("wind farm {j}: realization inconsistent with base and pins"));
            }
        }
        for (d, ls) in sets.load.iter().enumerate() {
            let act = &self.load_active[d];
            if let Some(b) = ls.budget {
                if act.iter().filter(|a| **a).count() > b {
                    return Err(format!("load {d}: budget exceeded"));
                }
            }
            for t in 0..case.horizon {
                let dev = ls.deviation.as_ref().map(|v| v[t]).unwrap_or(ls.upper[t] - ls.lower[t]);
                let want = ls.lower[t] + if act[t] { dev } else { 0.0 };
                if (want - self.realization.load[d][t]).abs() > 1e-9 {
                    return Err(format!("load {d}: hour {} off its box vertex", t + 1));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("worst case serialises")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lb: f64,
    pub ub: f64,
    pub wall_time: f64,
    pub restarts: usize,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iteration,lb,ub,wall_time_s,oracle_restarts\n");
    for r in trace {
        s.push_str(&format!("{},{},{},{:.6},{}\n", r.iteration, r.lb, r.ub, r.wall_time, r.restarts));
    }
    s
}

/// Bookkeeping of the CCG loop.
#[derive(Debug, Clone)]
pub struct CcgState {
    pub k: usize,
    pub lb: f64,
    pub ub: f64,
    pub scenarios: Vec<WorstCase>,
    pub trace: Vec<TraceRow>,
    pub epsilon: f64,
}

impl CcgState {
    pub fn gap(&self) -> f64 {
        self.ub - self.lb
    }

    pub fn converged(&self) -> bool {
        self.gap() <= self.epsilon
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RucSolution {
    pub variant: ModelVariant,
    pub commitment: Commitment,
    /// Basic dispatch `[unit][hour]` (MW).
    pub dispatch: Vec<Vec<f64>>,
    /// Redispatch `[unit][hour]` (MW).
    pub reserve: Vec<Vec<f64>>,
    pub worst_case: WorstCase,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub objective: f64,
    pub lower_bound: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MasterResult {
    pub commitment: Commitment,
    pub alpha: f64,
    pub objective: f64,
    /// Proven lower bound on the master optimum.
    pub lb: f64,
}

/// Second-stage LP at a fixed commitment and realization.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub value: f64,
    /// Total penalty slack (MW); positive means the realization is infeasible.
    pub slack: f64,
    pub grad_wind: Vec<Vec<f64>>,
    pub grad_load: Vec<Vec<f64>>,
}

impl InnerResult {
    pub fn infeasible(&self) -> bool {
        self.slack > 1e-6
    }
}

#[derive(Debug, Clone)]
pub struct SubResult {
    pub worst: WorstCase,
    pub restarts: usize,
}

pub struct RobustProblem<'a> {
    pub case: &'a MarketCase,
    pub sets: &'a UncertaintySets,
    pub sys: ConstraintSystem,
    pub opts: CcgOptions,
}

impl<'a> RobustProblem<'a> {
    pub fn new(case: &'a MarketCase, sets: &'a UncertaintySets, variant: ModelVariant, opts: CcgOptions) -> Result<Self, CcgError> {
        let sys = build_ruc(case, sets, variant)?;
        Ok(RobustProblem { case, sets, sys, opts })
    }

    pub fn oracles(&self) -> Result<Vec<WindOracle<'a>>, CcgError> {
        Ok(self.sets.wind.iter().map(WindOracle::new).collect::<Result<Vec<_>, _>>()?)
    }

    /// Master MILP over commitment with one dispatch copy per scenario.
    pub fn solve_master(&self, scenarios: &[Realization]) -> Result<MasterResult, CcgError> {
        assert!(!scenarios.is_empty(), "master needs at least one scenario");
        let mut req = SolveRequest::new(Sense::Minimize);
        let cols = self.sys.emit_commitment(&mut req);
        let alpha = req.add_col("alpha", 1.0, 0.0, f64::INFINITY);
        for (k, real) in scenarios.iter().enumerate() {
            let rhs = self.sys.bind_uncertainty(self.case, real)?;
            let em = self.sys.emit_dispatch(&mut req, &Binaries::Columns(&cols), &rhs, None, &format!("_s{k}"));
            let mut row = vec![(alpha, 1.0)];
            row.extend(em.cost_terms.iter().map(|&(c, a)| (c, -a)));
            req.add_row(format!("epigraph_s{k}"), row, 0.0, f64::INFINITY);
        }
        req.options.mip_rel_gap = 1e-9;
        req.options.mip_abs_gap = Some(0.05 * self.opts.epsilon);
        req.options.time_limit = self.opts.master_time_limit;
        let res = solve(&req)?;
        match res.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(CcgError::MasterInfeasible),
            s => return Err(CcgError::Other(format!("master ended with status {s:?}"))),
        }
        let commitment = Commitment::from_solution(&self.sys.catalog, &cols, &res.primal);
        let lb = res.mip_dual_bound.unwrap_or(res.objective).min(res.objective);
        Ok(MasterResult { commitment, alpha: res.primal[alpha], objective: res.objective, lb })
    }

    /// Inner dispatch LP with penalty slacks, plus the gradient of its value
    /// with respect to every wind and load value.
    pub fn second_stage(&self, x: &Commitment, real: &Realization) -> Result<InnerResult, CcgError> {
        let rhs = self.sys.bind_uncertainty(self.case, real)?;
        let mut req = SolveRequest::new(Sense::Minimize);
        let em = self.sys.emit_dispatch(&mut req, &Binaries::Fixed(x), &rhs, Some(self.opts.voll), "");
        for &(c, a) in &em.cost_terms {
            req.objective[c] += a;
        }
        req.want_duals = true;
        let res = solve(&req)?;
        if res.status != Status::Optimal {
            return Err(CcgError::Other(format!(
                "dispatch LP ended with status {:?}; the basic schedule is infeasible for this commitment",
                res.status
            )));
        }
        let y = res.row_duals.as_ref().expect("LP duals");
        let slack = em.slack_cols.iter().map(|&c| res.primal[c]).sum();
        let n_t = self.case.horizon;
        let mut grad_wind = vec![vec![0.0; n_t]; self.case.wind_farms.len()];
        let mut grad_load = vec![vec![0.0; n_t]; self.case.loads.len()];
        for (k, r) in self.sys.rows.iter().enumerate() {
            let Some(ri) = em.row_of[k] else { continue };
            for &(u, g) in &r.unc {
                match u {
                    UncVar::Wind(j, t) => grad_wind[j][t] += y[ri] * g,
                    UncVar::Load(d, t) => grad_load[d][t] += y[ri] * g,
                }
            }
        }
        Ok(InnerResult { value: res.objective, slack, grad_wind, grad_load })
    }

    /// Maximize a linear function of the realization over the sets.
    pub fn maximize_linear_over_set(
        &self,
        oracles: &mut [WindOracle<'a>],
        c_wind: &[Vec<f64>],
        c_load: &[Vec<f64>],
    ) -> Result<WorstCase, CcgError> {
        let mut wind = Vec::new();
        let mut base = Vec::new();
        let mut pins = Vec::new();
        for (j, (o, ws)) in oracles.iter_mut().zip(&self.sets.wind).enumerate() {
            let ch = o.maximize(&c_wind[j], ws.forecast(), ws.gamma())?;
            wind.push(ch.realized);
            base.push(ch.base);
            pins.push(ch.pins);
        }
        let mut load = Vec::new();
        let mut active = Vec::new();
        for (d, ls) in self.sets.load.iter().enumerate() {
            let (l, a, _) = maximize_load(&c_load[d], ls);
            load.push(l);
            active.push(a);
        }
        Ok(WorstCase {
            realization: Realization { wind, load },
            wind_base: base,
            wind_pins: pins,
            load_active: active,
            value: f64::NAN,
        })
    }

    fn evaluate(&self, x: &Commitment, mut wc: WorstCase) -> Result<(WorstCase, InnerResult), CcgError> {
        wc.certify(self.case, self.sets).map_err(CcgError::NotCertified)?;
        let inner = self.second_stage(x, &wc.realization)?;
        wc.value = if inner.infeasible() { f64::INFINITY } else { inner.value };
        Ok((wc, inner))
    }

    /// Alternating best response from one starting realization or direction.
    fn ascend(
        &self,
        x: &Commitment,
        oracles: &mut [WindOracle<'a>],
        start: Start,
    ) -> Result<WorstCase, CcgError> {
        let (mut gw, mut gl, mut cur_val, mut best): (Vec<Vec<f64>>, Vec<Vec<f64>>, f64, Option<WorstCase>) = match start {
            Start::Realization(r) => {
                let inner = self.second_stage(x, &r)?;
                (inner.grad_wind, inner.grad_load, inner.value, None)
            }
            Start::Certified(wc) => {
                let (wc, inner) = self.evaluate(x, wc)?;
                if wc.value.is_infinite() {
                    return Ok(wc);
                }
                (inner.grad_wind, inner.grad_load, inner.value, Some(wc))
            }
            Start::Direction(w, l) => (w, l, f64::NEG_INFINITY, None),
        };
        for _ in 0..self.opts.max_alternations {
            let wc = self.maximize_linear_over_set(oracles, &gw, &gl)?;
            let (wc, inner) = self.evaluate(x, wc)?;
            if wc.value.is_infinite() {
                return Ok(wc);
            }
            let gained = inner.value - cur_val;
            if best.as_ref().is_none_or(|b| wc.value > b.value) {
                best = Some(wc);
            }
            if gained <= self.opts.improve_tol * inner.value.abs().max(1.0) {
                break;
            }
            cur_val = inner.value;
            gw = inner.grad_wind;
            gl = inner.grad_load;
        }
        Ok(best.expect("at least one oracle step"))
    }

    /// Worst case for a fixed commitment: best of several alternating runs.
    pub fn solve_subproblem(
        &self,
        x: &Commitment,
        priors: &[WorstCase],
        oracles: &mut [WindOracle<'a>],
    ) -> Result<SubResult, CcgError> {
        let mut starts = vec![Start::Realization(Realization::forecast(self.case))];
        for p in priors {
            starts.push(Start::Certified(p.clone()));
        }
        if self.opts.directional_starts {
            let n_t = self.case.horizon;
            let w = self.case.wind_farms.len();
            let l = self.case.loads.len();
            starts.push(Start::Direction(vec![vec![-1.0; n_t]; w], vec![vec![1.0; n_t]; l]));
            starts.push(Start::Direction(vec![vec![1.0; n_t]; w], vec![vec![-1.0; n_t]; l]));
        }
        let restarts = starts.len();
        let mut best: Option<WorstCase> = None;
        for s in starts {
            let wc = self.ascend(x, oracles, s)?;
            let infeasible = wc.value.is_infinite();
            if best.as_ref().is_none_or(|b| wc.value > b.value) {
                best = Some(wc);
            }
            if infeasible {
                break;
            }
        }
        Ok(SubResult { worst: best.expect("at least one start"), restarts })
    }

    /// Full CCG loop.
    pub fn solve(&self) -> Result<RucSolution, CcgError> {
        let started = Instant::now();
        let mut oracles = self.oracles()?;
        let mut st = CcgState {
            k: 0,
            lb: f64::NEG_INFINITY,
            ub: f64::INFINITY,
            scenarios: Vec::new(),
            trace: Vec::new(),
            epsilon: self.opts.epsilon,
        };
        let mut scenarios = vec![Realization::forecast(self.case)];
        let mut best: Option<(Commitment, WorstCase)> = None;
        let mut last_x = None;
        while st.k < self.opts.max_iter {
            st.k += 1;
            let m = self.solve_master(&scenarios)?;
            st.lb = st.lb.max(m.lb);
            let trans = m.commitment.transition_cost_from(&self.sys);
            let sub = self.solve_subproblem(&m.commitment, &st.scenarios, &mut oracles)?;
            let wc = sub.worst;
            if wc.value.is_finite() && trans + wc.value < st.ub {
                st.ub = trans + wc.value;
                best = Some((m.commitment.clone(), wc.clone()));
            }
            st.trace.push(TraceRow {
                iteration: st.k,
                lb: st.lb,
                ub: st.ub,
                wall_time: started.elapsed().as_secs_f64(),
                restarts: sub.restarts,
            });
            log::info!("ccg iteration {}: lb {:.4} ub {:.4}", st.k, st.lb, st.ub);
            last_x = Some(m.commitment);
            if st.converged() {
                break;
            }
            if st.scenarios.iter().any(|s| s.realization == wc.realization) {
                // the oracle repeats itself; the master cannot move further
                log::warn!("ccg: worst case repeated at iteration {}", st.k);
                break;
            }
            scenarios.push(wc.realization.clone());
            st.scenarios.push(wc);
        }
        let converged = st.converged();
        let (commitment, worst_case) = match best {
            Some(b) => b,
            None => {
                // no feasible upper bound yet: report the last master schedule
                let x = last_x.expect("at least one iteration");
                let wc = st.scenarios.last().cloned().ok_or_else(|| CcgError::Other("no scenario available".into()))?;
                (x, wc)
            }
        };
        let (dispatch, reserve) = self.dispatch_at(&commitment, &worst_case.realization)?;
        Ok(RucSolution {
            variant: self.sys.variant,
            commitment,
            dispatch,
            reserve,
            worst_case,
            trace: st.trace,
            converged,
            objective: st.ub,
            lower_bound: st.lb,
            iterations: st.k,
        })
    }

    /// Hard-constrained dispatch at a commitment and realization.
    pub fn dispatch_at(&self, x: &Commitment, real: &Realization) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), CcgError> {
        let rhs = self.sys.bind_uncertainty(self.case, real)?;
        let (req, em) = self.sys.single_scenario(&rhs, Some(x), None);
        let res = solve(&req)?;
        let n_t = self.case.horizon;
        let n_u = self.case.units.len();
        if res.status != Status::Optimal {
            return Ok((vec![vec![f64::NAN; n_t]; n_u], vec![vec![f64::NAN; n_t]; n_u]));
        }
        let cat = &self.sys.catalog;
        let get = |v: Var| res.primal[em.cont_cols[cat.cont_slot(v)]];
        let p = (0..n_u).map(|i| (0..n_t).map(|t| get(Var::P(i, t))).collect()).collect();
        let r = (0..n_u).map(|i| (0..n_t).map(|t| get(Var::R(i, t))).collect()).collect();
        Ok((p, r))
    }
}

enum Start {
    Realization(Realization),
    Certified(WorstCase),
    Direction(Vec<Vec<f64>>, Vec<Vec<f64>>),
}

/// Robust unit commitment by column-and-constraint generation.
pub fn solve_rscuc(
    case: &MarketCase,
    sets: &UncertaintySets,
    variant: ModelVariant,
    opts: &CcgOptions,
) -> Result<RucSolution, CcgError> {
    if !(opts.epsilon > 0.0) {
        return Err(CcgError::Other("epsilon must be positive".into()));
    }
    RobustProblem::new(case, sets, variant, opts.clone())?.solve()
}

/// Rows of a kind that bind in a solved dispatch (nonzero dual).
pub fn binding_kinds(sys: &ConstraintSystem, row_of: &[Option<usize>], duals: &[f64], tol: f64) -> Vec<RowKind> {
    let mut out: Vec<RowKind> = sys
        .rows
        .iter()
        .enumerate()
        .filter_map(|(k, r)| row_of[k].filter(|&ri| duals[ri].abs() > tol).map(|_| r.tag.kind))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Wind sets of a case built from per-farm sets, used by tests and the CLI.
pub fn sets_with_wind(case: &MarketCase, wind: Vec<WindSet>, load_budget: usize) -> UncertaintySets {
    UncertaintySets { wind, load: UncertaintySets::case_loads(case, load_budget) }
}
