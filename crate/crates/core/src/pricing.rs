//! Dispatch LP at fixed commitment and realization, dual-based energy and
//! uncertainty prices, and settlements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::MarketCase;
use crate::formulation::{
    build_system, Commitment, ConstraintSystem, FormulationError, ModelVariant, Realization, RowKind, Var,
};
use crate::solver::{solve, SolveRequest, SolveResult, SolverError, Status};

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("{0}")]
    Formulation(#[from] FormulationError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("dispatch LP infeasible for the given commitment and realization; rows needing relief: {0}")]
    Infeasible(String),
    #[error("dispatch LP ended with status {0:?}")]
    Status(Status),
}

/// Row duals grouped by row kind. Balance duals are per hour; unit and line
/// duals are `[index][hour]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBundle {
    pub lambda_b: Vec<f64>,
    pub lambda_r: Vec<f64>,
    pub unit: BTreeMap<RowKind, Vec<Vec<f64>>>,
    pub line: BTreeMap<RowKind, Vec<Vec<f64>>>,
}

impl DualBundle {
    /// Dual of an indexed row, zero when the row does not exist.
    pub fn get(&self, kind: RowKind, index: usize, t: usize) -> f64 {
        self.unit
            .get(&kind)
            .or_else(|| self.line.get(&kind))
            .and_then(|m| m.get(index))
            .and_then(|v| v.get(t))
            .copied()
            .unwrap_or(0.0)
    }

    /// `η̄ − η̲` of line `l` at hour `t` for the basic (`false`) or redispatch stage.
    pub fn line_net(&self, l: usize, t: usize, redispatch: bool) -> f64 {
        if redispatch {
            self.get(RowKind::LineUpR, l, t) - self.get(RowKind::LineDnR, l, t)
        } else {
            self.get(RowKind::LineUpB, l, t) - self.get(RowKind::LineDnB, l, t)
        }
    }

    /// Smallest inequality dual; nonnegative at a correct optimum.
    pub fn min_inequality_dual(&self) -> f64 {
        self.unit
            .values()
            .chain(self.line.values())
            .flatten()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solved dispatch LP.
#[derive(Debug, Clone)]
pub struct Rsced {
    pub variant: ModelVariant,
    pub commitment: Commitment,
    pub realization: Realization,
    /// `[unit][hour]` (MW).
    pub dispatch: Vec<Vec<f64>>,
    pub reserve: Vec<Vec<f64>>,
    /// Including startup and shutdown costs of the commitment.
    pub objective: f64,
    pub energy_cost: f64,
    pub reserve_cost: f64,
    pub duals: DualBundle,
    pub complementarity: f64,
    pub duality_gap: f64,
    /// Line flows `[line][hour]` at the forecast and at the realization.
    pub flow_b: Vec<Vec<f64>>,
    pub flow_r: Vec<Vec<f64>>,
    pub sys: ConstraintSystem,
    pub row_of: Vec<Option<usize>>,
    /// Request columns of `ΔP`, `[unit][hour]`.
    pub reserve_cols: Vec<Vec<usize>>,
    pub result: SolveResult,
    pub request: SolveRequest,
}

pub fn solve_rsced(
    case: &MarketCase,
    variant: ModelVariant,
    commitment: &Commitment,
    realization: &Realization,
) -> Result<Rsced, PricingError> {
    let sys = build_system(case, variant)?;
    sys.check_commitment(commitment)?;
    let rhs = sys.bind_uncertainty(case, realization)?;
    let (mut req, em) = sys.single_scenario(&rhs, Some(commitment), None);
    req.want_duals = true;
    let res = solve(&req)?;
    match res.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(PricingError::Infeasible(infeasibility_hint(&sys, &rhs, commitment)?)),
        s => return Err(PricingError::Status(s)),
    }
    let cat = &sys.catalog;
    let res = least_redispatch(&req, res, &em.cont_cols[cat.cont_slot(Var::R(0, 0))..])?;
    let (n_u, n_t, n_l) = (case.units.len(), case.horizon, case.lines.len());
    let get = |v: Var| res.primal[em.cont_cols[cat.cont_slot(v)]];
    let dispatch: Vec<Vec<f64>> = (0..n_u).map(|i| (0..n_t).map(|t| get(Var::P(i, t))).collect()).collect();
    let reserve: Vec<Vec<f64>> = (0..n_u).map(|i| (0..n_t).map(|t| get(Var::R(i, t))).collect()).collect();
    let reserve_cols: Vec<Vec<usize>> =
        (0..n_u).map(|i| (0..n_t).map(|t| em.cont_cols[cat.cont_slot(Var::R(i, t))]).collect()).collect();

    let y = res.row_duals.as_ref().expect("LP duals");
    let mut duals = DualBundle {
        lambda_b: vec![0.0; n_t],
        lambda_r: vec![0.0; n_t],
        unit: BTreeMap::new(),
        line: BTreeMap::new(),
    };
    for (k, r) in sys.rows.iter().enumerate() {
        let Some(ri) = em.row_of[k] else { continue };
        let kind = r.kind();
        let t = r.tag.t;
        match kind {
            RowKind::BalB => duals.lambda_b[t] = y[ri],
            RowKind::BalR => duals.lambda_r[t] = y[ri],
            RowKind::LineUpB | RowKind::LineDnB | RowKind::LineUpR | RowKind::LineDnR => {
                duals.line.entry(kind).or_insert_with(|| vec![vec![0.0; n_t]; n_l])[r.tag.index.unwrap()][t] = y[ri];
            }
            _ => {
                duals.unit.entry(kind).or_insert_with(|| vec![vec![0.0; n_t]; n_u])[r.tag.index.unwrap()][t] = y[ri];
            }
        }
    }

    let mut energy_cost = 0.0;
    let mut reserve_cost = 0.0;
    for (i, u) in case.units.iter().enumerate() {
        for t in 0..n_t {
            energy_cost += u.cost_energy * dispatch[i][t];
            if variant.include_reserve_cost {
                reserve_cost += u.cost_energy * reserve[i][t];
            }
        }
    }
    let mut flow_b = vec![vec![0.0; n_t]; n_l];
    let mut flow_r = vec![vec![0.0; n_t]; n_l];
    for t in 0..n_t {
        let p: Vec<f64> = (0..n_u).map(|i| dispatch[i][t]).collect();
        let pr: Vec<f64> = (0..n_u).map(|i| dispatch[i][t] + reserve[i][t]).collect();
        let wf: Vec<f64> = case.wind_farms.iter().map(|w| w.forecast[t]).collect();
        let lf: Vec<f64> = case.loads.iter().map(|l| l.forecast[t]).collect();
        let wr: Vec<f64> = realization.wind.iter().map(|w| w[t]).collect();
        let lr: Vec<f64> = realization.load.iter().map(|l| l[t]).collect();
        let fb = case.line_flows(&case.net_injection(&p, &wf, &lf));
        let fr = case.line_flows(&case.net_injection(&pr, &wr, &lr));
        for l in 0..n_l {
            flow_b[l][t] = fb[l];
            flow_r[l][t] = fr[l];
        }
    }
    let complementarity = res.complementarity_residual(&req).unwrap_or(f64::NAN);
    let duality_gap = res
        .dual_objective(&req)
        .map(|d| (res.objective - d).abs() / res.objective.abs().max(1.0))
        .unwrap_or(f64::NAN);
    Ok(Rsced {
        variant,
        commitment: commitment.clone(),
        realization: realization.clone(),
        dispatch,
        reserve,
        objective: res.objective,
        energy_cost,
        reserve_cost,
        duals,
        complementarity,
        duality_gap,
        flow_b,
        flow_r,
        row_of: em.row_of,
        reserve_cols,
        sys,
        result: res,
        request: req,
    })
}

/// Among optimal dispatches, the one with least total `|ΔP|`. The split
/// between `P` and `ΔP` is otherwise arbitrary when both carry the same cost.
/// Duals of the first solve stay valid for any optimal primal point.
fn least_redispatch(req: &SolveRequest, mut res: SolveResult, r_cols: &[usize]) -> Result<SolveResult, PricingError> {
    let mut lex = req.clone();
    lex.want_duals = false;
    let obj_row: Vec<(usize, f64)> = req.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (j, c)).collect();
    lex.add_row("objective_cap", obj_row, f64::NEG_INFINITY, res.objective - req.objective_offset);
    lex.objective.iter_mut().for_each(|c| *c = 0.0);
    lex.objective_offset = 0.0;
    for &j in r_cols {
        let a = lex.add_col(format!("abs_{}", req.col_names[j]), 1.0, 0.0, f64::INFINITY);
        lex.add_row(format!("abs_up_{}", req.col_names[j]), vec![(a, 1.0), (j, -1.0)], 0.0, f64::INFINITY);
        lex.add_row(format!("abs_dn_{}", req.col_names[j]), vec![(a, 1.0), (j, 1.0)], 0.0, f64::INFINITY);
    }
    let second = solve(&lex)?;
    if second.status != Status::Optimal {
        return Ok(res);
    }
    let n = req.num_cols();
    res.primal.copy_from_slice(&second.primal[..n]);
    res.row_activity = req.rows.iter().map(|r| r.coeffs.iter().map(|&(j, a)| a * res.primal[j]).sum()).collect();
    res.objective = req.objective.iter().zip(&res.primal).map(|(c, x)| c * x).sum::<f64>() + req.objective_offset;
    Ok(res)
}

/// Smallest and largest `Σ c·ΔP` over all optimal dispatches of `sol`,
/// with every unit's redispatch priced at its energy offer.
pub fn reserve_cost_range(sol: &Rsced, case: &MarketCase) -> Result<(f64, f64), PricingError> {
    let req = &sol.request;
    let mut face = req.clone();
    face.want_duals = false;
    let obj_row: Vec<(usize, f64)> = req.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (j, c)).collect();
    let cap = sol.result.objective - req.objective_offset;
    face.add_row("objective_cap", obj_row, f64::NEG_INFINITY, cap + 1e-9 * cap.abs().max(1.0));
    face.objective_offset = 0.0;
    let mut out = [0.0; 2];
    for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
        face.objective.iter_mut().for_each(|c| *c = 0.0);
        for (i, u) in case.units.iter().enumerate() {
            for &j in &sol.reserve_cols[i] {
                face.objective[j] = sign * u.cost_energy;
            }
        }
        let r = solve(&face)?;
        if r.status != Status::Optimal {
            return Err(PricingError::Status(r.status));
        }
        out[k] = sign * r.objective;
    }
    Ok((out[0], out[1]))
}

/// Rows whose penalty slacks are used when the realization cannot be met.
fn infeasibility_hint(sys: &ConstraintSystem, rhs: &[f64], x: &Commitment) -> Result<String, PricingError> {
    let (req, em) = sys.single_scenario(rhs, Some(x), Some(1e4));
    let res = solve(&req)?;
    if res.status != Status::Optimal {
        return Ok("the basic schedule itself is infeasible for this commitment".into());
    }
    let mut tags = Vec::new();
    let mut s = em.slack_cols.iter();
    for (k, r) in sys.rows.iter().enumerate() {
        if em.row_of[k].is_none() || !r.kind().is_uncertain() {
            continue;
        }
        let n = if r.sense == crate::formulation::RowSense::Eq { 2 } else { 1 };
        let used: f64 = (0..n).map(|_| res.primal[*s.next().unwrap()]).sum();
        if used > 1e-7 {
            tags.push(r.tag.to_string());
        }
    }
    Ok(tags.join(", "))
}

/// `[bus][hour]` energy prices.
pub fn compute_lmp(duals: &DualBundle, case: &MarketCase) -> Vec<Vec<f64>> {
    let n_t = duals.lambda_b.len();
    (0..case.buses.len())
        .map(|m| {
            (0..n_t)
                .map(|t| {
                    let mut p = duals.lambda_b[t];
                    for l in 0..case.lines.len() {
                        let g = case.gsf[l][m];
                        p -= g * duals.line_net(l, t, false) + g * duals.line_net(l, t, true);
                    }
                    p
                })
                .collect()
        })
        .collect()
}

/// `[bus][hour]` uncertainty prices.
pub fn compute_ulmp(duals: &DualBundle, case: &MarketCase) -> Vec<Vec<f64>> {
    let n_t = duals.lambda_r.len();
    (0..case.buses.len())
        .map(|m| {
            (0..n_t)
                .map(|t| {
                    let mut p = duals.lambda_r[t];
                    for l in 0..case.lines.len() {
                        p -= case.gsf[l][m] * duals.line_net(l, t, true);
                    }
                    p
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitKkt {
    pub unit: usize,
    pub t: usize,
    pub cost: f64,
    pub lmp_bus: f64,
    pub lmp_unit: f64,
    pub ulmp_bus: f64,
    pub ulmp_unit: f64,
    /// Ramp-row contribution to the energy price gap `cost − LMP`.
    pub ramp_terms: f64,
    /// Capacity-row contribution to the same gap.
    pub limit_terms: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktCheck {
    pub rows: Vec<UnitKkt>,
    pub max_residual: f64,
    /// `(unit, hour)` pairs above the tolerance.
    pub flagged: Vec<(usize, usize)>,
}

pub const KKT_TOL: f64 = 1e-5;

/// Unit-side prices from each committed unit's own rows, compared with the
/// bus prices.
pub fn kkt_crosscheck(sol: &Rsced, case: &MarketCase) -> KktCheck {
    let lmp = compute_lmp(&sol.duals, case);
    let ulmp = compute_ulmp(&sol.duals, case);
    let y = sol.result.row_duals.as_ref().expect("LP duals");
    let n_t = case.horizon;
    let n_u = case.units.len();
    // Σ y·a over unit-local rows, per continuous variable
    let mut local_p = vec![vec![0.0; n_t]; n_u];
    let mut local_r = vec![vec![0.0; n_t]; n_u];
    let mut ramp_p = vec![vec![0.0; n_t]; n_u];
    for (k, r) in sol.sys.rows.iter().enumerate() {
        let kind = r.kind();
        let Some(ri) = sol.row_of[k] else { continue };
        if matches!(
            kind,
            RowKind::BalB | RowKind::BalR | RowKind::LineUpB | RowKind::LineDnB | RowKind::LineUpR | RowKind::LineDnR
        ) {
            continue;
        }
        for &(v, a) in &r.coeffs {
            match v {
                Var::P(i, t) => {
                    local_p[i][t] += y[ri] * a;
                    if kind.is_ramp() {
                        ramp_p[i][t] += y[ri] * a;
                    }
                }
                Var::R(i, t) => local_r[i][t] += y[ri] * a,
                _ => {}
            }
        }
    }
    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    let mut max_residual: f64 = 0.0;
    for (i, u) in case.units.iter().enumerate() {
        let reserve_cost = if sol.variant.include_reserve_cost { u.cost_energy } else { 0.0 };
        for t in 0..n_t {
            if !sol.commitment.on[i][t] {
                continue;
            }
            let lmp_unit = u.cost_energy - local_p[i][t];
            let ulmp_unit = reserve_cost - local_r[i][t];
            let residual = (lmp_unit - lmp[u.bus][t]).abs().max((ulmp_unit - ulmp[u.bus][t]).abs());
            if residual > KKT_TOL {
                flagged.push((i, t));
            }
            max_residual = max_residual.max(residual);
            rows.push(UnitKkt {
                unit: i,
                t,
                cost: u.cost_energy,
                lmp_bus: lmp[u.bus][t],
                lmp_unit,
                ulmp_bus: ulmp[u.bus][t],
                ulmp_unit,
                ramp_terms: ramp_p[i][t],
                limit_terms: local_p[i][t] - ramp_p[i][t],
                residual,
            });
        }
    }
    KktCheck { rows, max_residual, flagged }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceReport {
    pub lmp: Vec<Vec<f64>>,
    pub ulmp: Vec<Vec<f64>>,
    /// `[line][hour]`: a line dual of either stage is nonzero.
    pub congested: Vec<Vec<bool>>,
    /// Units with interior output and no binding unit rows, per hour.
    pub marginal_units: Vec<Vec<usize>>,
}

pub const DUAL_EPS: f64 = 1e-9;

pub fn price_report(sol: &Rsced, case: &MarketCase) -> PriceReport {
    let n_t = case.horizon;
    let congested = (0..case.lines.len())
        .map(|l| {
            (0..n_t)
                .map(|t| {
                    [RowKind::LineUpB, RowKind::LineDnB, RowKind::LineUpR, RowKind::LineDnR]
                        .iter()
                        .any(|&k| sol.duals.get(k, l, t).abs() > DUAL_EPS)
                })
                .collect()
        })
        .collect();
    let marginal_units = (0..n_t)
        .map(|t| {
            (0..case.units.len())
                .filter(|&i| {
                    sol.commitment.on[i][t]
                        && sol.duals.unit.values().all(|m| m[i][t].abs() <= DUAL_EPS)
                })
                .collect()
        })
        .collect();
    PriceReport { lmp: compute_lmp(&sol.duals, case), ulmp: compute_ulmp(&sol.duals, case), congested, marginal_units }
}

/// Largest spread of LMP and ULMP across buses over hours without any
/// binding line dual.
pub fn uncongested_spread(report: &PriceReport) -> f64 {
    let n_t = report.lmp.first().map_or(0, |v| v.len());
    let mut worst: f64 = 0.0;
    for t in 0..n_t {
        if report.congested.iter().any(|l| l[t]) {
            continue;
        }
        for prices in [&report.lmp, &report.ulmp] {
            let (lo, hi) = prices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[t]), b.max(v[t])));
            worst = worst.max(hi - lo);
        }
    }
    worst
}

pub fn prices_csv(report: &PriceReport, case: &MarketCase) -> String {
    let mut s = String::from("bus,hour,lmp,ulmp\n");
    for (m, b) in case.buses.iter().enumerate() {
        for t in 0..case.horizon {
            s.push_str(&format!("{},{},{},{}\n", b.name, t + 1, report.lmp[m][t], report.ulmp[m][t]));
        }
    }
    s
}

/// Plain-text price table with congestion and marginal-unit notes.
pub fn price_text(report: &PriceReport, case: &MarketCase) -> String {
    let mut s = String::new();
    for t in 0..case.horizon {
        s.push_str(&format!("hour {:>2}:", t + 1));
        for (m, b) in case.buses.iter().enumerate() {
            s.push_str(&format!("  {} {:.2}/{:.2}", b.name, report.lmp[m][t], report.ulmp[m][t]));
        }
        let lines: Vec<&str> =
            case.lines.iter().enumerate().filter(|(l, _)| report.congested[*l][t]).map(|(_, x)| x.name.as_str()).collect();
        if !lines.is_empty() {
            s.push_str(&format!("  congested: {}", lines.join(" ")));
        }
        let mu: Vec<&str> = report.marginal_units[t].iter().map(|&i| case.units[i].name.as_str()).collect();
        if !mu.is_empty() {
            s.push_str(&format!("  marginal: {}", mu.join(" ")));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementLine {
    pub participant: String,
    pub item: String,
    /// 1-based.
    pub hour: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAccount {
    pub name: String,
    pub energy_income: f64,
    pub reserve_income: f64,
    pub generation_cost: f64,
    pub transition_cost: f64,
    pub profit: f64,
    pub hourly_profit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub lines: Vec<SettlementLine>,
    pub units: Vec<UnitAccount>,
    pub load_payments: f64,
    pub generator_credits: f64,
    pub wind_net_credits: f64,
    pub congestion_rent: f64,
    /// Sum of absolute ULMP line items.
    pub ulmp_cash_flow: f64,
}

impl SettlementReport {
    /// Payments minus credits minus congestion rent.
    pub fn imbalance(&self) -> f64 {
        self.load_payments - self.generator_credits - self.wind_net_credits - self.congestion_rent
    }
}

/// Line items per participant and hour. Units are charged their offer cost
/// on `P + ΔP`.
pub fn settle(lmp: &[Vec<f64>], ulmp: &[Vec<f64>], sol: &Rsced, case: &MarketCase) -> SettlementReport {
    let n_t = case.horizon;
    let mut lines = Vec::new();
    let mut push = |who: &str, item: &str, t: usize, amount: f64| {
        lines.push(SettlementLine { participant: who.to_string(), item: item.to_string(), hour: t + 1, amount });
    };
    let mut ulmp_cash_flow = 0.0;
    let mut load_payments = 0.0;
    for (d, l) in case.loads.iter().enumerate() {
        for t in 0..n_t {
            let e = lmp[l.bus][t] * l.forecast[t];
            let u = ulmp[l.bus][t] * (sol.realization.load[d][t] - l.forecast[t]);
            push(&l.name, "energy_payment", t, e);
            push(&l.name, "uncertainty_payment", t, u);
            load_payments += e + u;
            ulmp_cash_flow += u.abs();
        }
    }
    let mut wind_net_credits = 0.0;
    for (j, w) in case.wind_farms.iter().enumerate() {
        for t in 0..n_t {
            let e = lmp[w.bus][t] * w.forecast[t];
            let charge = -ulmp[w.bus][t] * (sol.realization.wind[j][t] - w.forecast[t]);
            push(&w.name, "energy_income", t, e);
            push(&w.name, "uncertainty_charge", t, charge);
            wind_net_credits += e - charge;
            ulmp_cash_flow += charge.abs();
        }
    }
    let mut units = Vec::new();
    let mut generator_credits = 0.0;
    for (i, u) in case.units.iter().enumerate() {
        let mut acc = UnitAccount {
            name: u.name.clone(),
            energy_income: 0.0,
            reserve_income: 0.0,
            generation_cost: 0.0,
            transition_cost: 0.0,
            profit: 0.0,
            hourly_profit: vec![0.0; n_t],
        };
        for t in 0..n_t {
            let p = sol.dispatch[i][t];
            let r = sol.reserve[i][t];
            let e = lmp[u.bus][t] * p;
            let res = ulmp[u.bus][t] * r;
            let cost = u.cost_energy * (p + r);
            let tc = if sol.commitment.startup[i][t] { u.cost_startup } else { 0.0 }
                + if sol.commitment.shutdown[i][t] { u.cost_shutdown } else { 0.0 };
            push(&u.name, "energy_income", t, e);
            push(&u.name, "reserve_income", t, res);
            push(&u.name, "generation_cost", t, cost);
            if tc != 0.0 {
                push(&u.name, "transition_cost", t, tc);
            }
            acc.energy_income += e;
            acc.reserve_income += res;
            acc.generation_cost += cost;
            acc.transition_cost += tc;
            acc.hourly_profit[t] = e + res - cost - tc;
            ulmp_cash_flow += res.abs();
        }
        acc.profit = acc.energy_income + acc.reserve_income - acc.generation_cost - acc.transition_cost;
        generator_credits += acc.energy_income + acc.reserve_income;
        units.push(acc);
    }
    let mut congestion_rent = 0.0;
    for l in 0..case.lines.len() {
        for t in 0..n_t {
            congestion_rent +=
                sol.duals.line_net(l, t, false) * sol.flow_b[l][t] + sol.duals.line_net(l, t, true) * sol.flow_r[l][t];
        }
    }
    SettlementReport { lines, units, load_payments, generator_credits, wind_net_credits, congestion_rent, ulmp_cash_flow }
}

pub fn settlement_csv(rep: &SettlementReport) -> String {
    let mut s = String::from("participant,item,hour,amount\n");
    for l in &rep.lines {
        s.push_str(&format!("{},{},{},{}\n", l.participant, l.item, l.hour, l.amount));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{pjm5, Bus, Line};
    use crate::formulation::tests::{one_bus, unit};
    use crate::formulation::UncertaintySets;

    fn solved(case: &MarketCase, variant: ModelVariant, real: &Realization) -> Rsced {
        let sets = UncertaintySets::deterministic(case);
        let sys = crate::formulation::build_ruc(case, &sets, variant).unwrap();
        let rhs = sys.bind_uncertainty(case, &Realization::forecast(case)).unwrap();
        let (req, em) = sys.single_scenario(&rhs, None, None);
        let res = solve(&req).unwrap();
        let x = Commitment::from_solution(&sys.catalog, &em.bin_cols, &res.primal);
        solve_rsced(case, variant, &x, real).unwrap()
    }

    #[test]
    fn single_bus_marginal_cost_sets_price() {
        let case = one_bus(vec![unit("a", 10.0, 0.0, 50.0, 100.0), unit("b", 20.0, 0.0, 200.0, 200.0)], vec![100.0; 3]);
        let sol = solved(&case, ModelVariant::MODEL1, &Realization::forecast(&case));
        let lmp = compute_lmp(&sol.duals, &case);
        assert!(lmp[0].iter().all(|p| (p - 20.0).abs() < 1e-9), "{lmp:?}");
    }

    #[test]
    fn unit_at_upper_limit_has_positive_limit_dual() {
        let case = one_bus(vec![unit("a", 10.0, 0.0, 50.0, 100.0), unit("b", 20.0, 0.0, 200.0, 200.0)], vec![100.0; 2]);
        let sol = solved(&case, ModelVariant::MODEL3, &Realization::forecast(&case));
        let kkt = kkt_crosscheck(&sol, &case);
        let a = kkt.rows.iter().find(|r| r.unit == 0 && r.t == 0).unwrap();
        assert!((a.lmp_bus - 20.0).abs() < 1e-9);
        assert!((a.limit_terms + 10.0).abs() < 1e-9, "{a:?}");
        assert!(kkt.max_residual < 1e-9);
    }

    #[test]
    fn deviation_served_at_reserve_cost() {
        let case = one_bus(vec![unit("a", 10.0, 0.0, 50.0, 100.0), unit("b", 20.0, 0.0, 200.0, 200.0)], vec![100.0; 2]);
        let mut real = Realization::forecast(&case);
        real.load[0][1] += 1e-3;
        let sol = solved(&case, ModelVariant::MODEL1, &real);
        let ulmp = compute_ulmp(&sol.duals, &case);
        assert!((ulmp[0][1] - 20.0).abs() < 1e-9, "{ulmp:?}");
    }

    #[test]
    fn zero_uncertainty_has_no_ulmp_flows() {
        let case = pjm5();
        let sol = solved(&case, ModelVariant::MODEL1, &Realization::forecast(&case));
        let rep = price_report(&sol, &case);
        let s = settle(&rep.lmp, &rep.ulmp, &sol, &case);
        assert!(s.ulmp_cash_flow < 1e-6, "{}", s.ulmp_cash_flow);
        assert!(s.imbalance().abs() < 1e-6, "{}", s.imbalance());
    }

    #[test]
    fn congested_redispatch_line_splits_ulmp() {
        let mut case = one_bus(vec![unit("a", 10.0, 0.0, 300.0, 300.0), unit("b", 30.0, 0.0, 300.0, 300.0)], vec![100.0]);
        case.buses.push(Bus { id: 1, name: "B".into() });
        case.units[1].bus = 1;
        case.loads[0].bus = 1;
        case.lines.push(Line { id: 0, name: "AB".into(), from_bus: 0, to_bus: 1, reactance: Some(0.1), capacity: 105.0 });
        case.gsf = case.compute_gsf().unwrap();
        let mut real = Realization::forecast(&case);
        real.load[0][0] += 10.0;
        let sol = solved(&case, ModelVariant::MODEL1, &real);
        let ulmp = compute_ulmp(&sol.duals, &case);
        assert!((ulmp[0][0] - 10.0).abs() < 1e-9 && (ulmp[1][0] - 30.0).abs() < 1e-9, "{ulmp:?}");
        let kkt = kkt_crosscheck(&sol, &case);
        assert!(kkt.max_residual < KKT_TOL);
        let rep = price_report(&sol, &case);
        let s = settle(&rep.lmp, &rep.ulmp, &sol, &case);
        assert!(s.congestion_rent > 0.0);
        assert!(s.imbalance().abs() < 1e-6, "{}", s.imbalance());
    }

    #[test]
    fn settlement_arithmetic() {
        let case = one_bus(vec![unit("a", 10.0, 0.0, 200.0, 200.0)], vec![100.0]);
        let mut sol = solved(&case, ModelVariant::MODEL1, &Realization::forecast(&case));
        sol.dispatch[0][0] = 100.0;
        sol.reserve[0][0] = 0.0;
        let s = settle(&[vec![40.0]], &[vec![25.0]], &sol, &case);
        assert_eq!(s.units[0].energy_income, 4000.0);
        let mut wind_case = case.clone();
        wind_case.wind_farms.push(crate::case::WindFarm { id: 0, name: "W".into(), bus: 0, capacity: 50.0, forecast: vec![20.0] });
        sol.realization.wind = vec![vec![10.0]];
        let s = settle(&[vec![40.0]], &[vec![25.0]], &sol, &wind_case);
        let charge = s.lines.iter().find(|l| l.participant == "W" && l.item == "uncertainty_charge").unwrap();
        assert_eq!(charge.amount, 250.0);
    }

    #[test]
    fn infeasible_fixing_names_rows() {
        let case = one_bus(vec![unit("a", 10.0, 0.0, 120.0, 200.0)], vec![100.0]);
        let x = Commitment::all_on(&case);
        let mut real = Realization::forecast(&case);
        real.load[0][0] = 150.0;
        let err = solve_rsced(&case, ModelVariant::MODEL1, &x, &real).unwrap_err().to_string();
        assert!(err.contains("bal_r_t1"), "{err}");
    }
}
