//! Robust unit-commitment constraint system.
//!
//! Rows are kept backend-neutral: each row is `Σ a·var (≥ | =) rhs + Σ g·Δu`
//! where `Δu` are wind/load deviations from forecast. Commitment binaries may
//! be emitted as MILP columns (master problem) or substituted as constants
//! (dispatch LPs). All inequalities are stored in `≥` form so that the
//! sensitivity dual of every inequality row is nonnegative in a minimisation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::MarketCase;
use crate::imeus::{BoxSet, WindSet};
use crate::solver::{lp_format, Sense, SolveRequest};

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("commitment violates logic or minimum up/down rows: {}", format_pairs(.0))]
    Commitment(Vec<(usize, usize, RowKind)>),
    #[error("{0}")]
    Build(String),
}

fn format_pairs(v: &[(usize, usize, RowKind)]) -> String {
    v.iter()
        .take(12)
        .map(|(i, t, k)| format!("{}(i{i},t{})", k.prefix(), t + 1))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub include_overall_ramp: bool,
    pub include_reserve_cost: bool,
    pub include_ramping: bool,
}

impl ModelVariant {
    pub const MODEL1: ModelVariant =
        ModelVariant { include_overall_ramp: true, include_reserve_cost: true, include_ramping: true };
    pub const MODEL2: ModelVariant =
        ModelVariant { include_overall_ramp: false, include_reserve_cost: false, include_ramping: true };
    pub const MODEL3: ModelVariant =
        ModelVariant { include_overall_ramp: false, include_reserve_cost: true, include_ramping: false };

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "model1" | "1" => Some(Self::MODEL1),
            "model2" | "2" => Some(Self::MODEL2),
            "model3" | "3" => Some(Self::MODEL3),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Self::MODEL1 => "model1".into(),
            Self::MODEL2 => "model2".into(),
            Self::MODEL3 => "model3".into(),
            v => format!(
                "custom(overall_ramp={},reserve_cost={},ramping={})",
                v.include_overall_ramp, v.include_reserve_cost, v.include_ramping
            ),
        }
    }
}

impl Default for ModelVariant {
    fn default() -> Self {
        Self::MODEL1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RowKind {
    BalB,
    PmaxB,
    PminB,
    RampUpB,
    RampDnB,
    LineUpB,
    LineDnB,
    BalR,
    PmaxR,
    PminR,
    ResUp,
    ResDn,
    RampAggUp,
    RampAggDn,
    LineUpR,
    LineDnR,
    MinUp,
    MinDn,
    Transition,
    Exclusive,
}

impl RowKind {
    pub const ALL: [RowKind; 20] = [
        RowKind::BalB,
        RowKind::PmaxB,
        RowKind::PminB,
        RowKind::RampUpB,
        RowKind::RampDnB,
        RowKind::LineUpB,
        RowKind::LineDnB,
        RowKind::BalR,
        RowKind::PmaxR,
        RowKind::PminR,
        RowKind::ResUp,
        RowKind::ResDn,
        RowKind::RampAggUp,
        RowKind::RampAggDn,
        RowKind::LineUpR,
        RowKind::LineDnR,
        RowKind::MinUp,
        RowKind::MinDn,
        RowKind::Transition,
        RowKind::Exclusive,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            RowKind::BalB => "bal_b",
            RowKind::PmaxB => "pmax_b",
            RowKind::PminB => "pmin_b",
            RowKind::RampUpB => "ramp_up_b",
            RowKind::RampDnB => "ramp_dn_b",
            RowKind::LineUpB => "line_up_b",
            RowKind::LineDnB => "line_dn_b",
            RowKind::BalR => "bal_r",
            RowKind::PmaxR => "pmax_r",
            RowKind::PminR => "pmin_r",
            RowKind::ResUp => "res_up",
            RowKind::ResDn => "res_dn",
            RowKind::RampAggUp => "ramp_agg_up",
            RowKind::RampAggDn => "ramp_agg_dn",
            RowKind::LineUpR => "line_up_r",
            RowKind::LineDnR => "line_dn_r",
            RowKind::MinUp => "min_up",
            RowKind::MinDn => "min_dn",
            RowKind::Transition => "logic",
            RowKind::Exclusive => "logic_excl",
        }
    }

    /// Name of the dual attached to the row.
    pub fn dual_label(self) -> &'static str {
        match self {
            RowKind::BalB => "lambda_b",
            RowKind::PmaxB => "beta_max_b",
            RowKind::PminB => "beta_min_b",
            RowKind::RampUpB => "alpha_up_b",
            RowKind::RampDnB => "alpha_dn_b",
            RowKind::LineUpB => "eta_max_b",
            RowKind::LineDnB => "eta_min_b",
            RowKind::BalR => "lambda_r",
            RowKind::PmaxR => "beta_max_r",
            RowKind::PminR => "beta_min_r",
            RowKind::ResUp => "alpha_up_r",
            RowKind::ResDn => "alpha_dn_r",
            RowKind::RampAggUp => "alpha_up_2",
            RowKind::RampAggDn => "alpha_dn_2",
            RowKind::LineUpR => "eta_max_r",
            RowKind::LineDnR => "eta_min_r",
            RowKind::MinUp => "mu_up",
            RowKind::MinDn => "mu_dn",
            RowKind::Transition => "nu",
            RowKind::Exclusive => "xi",
        }
    }

    pub fn is_ramp(self) -> bool {
        matches!(
            self,
            RowKind::RampUpB | RowKind::RampDnB | RowKind::ResUp | RowKind::ResDn | RowKind::RampAggUp | RowKind::RampAggDn
        )
    }

    /// Rows that only involve commitment binaries.
    pub fn is_commitment(self) -> bool {
        matches!(self, RowKind::MinUp | RowKind::MinDn | RowKind::Transition | RowKind::Exclusive)
    }

    /// Rows whose right-hand side moves with the uncertainty.
    pub fn is_uncertain(self) -> bool {
        matches!(self, RowKind::BalR | RowKind::LineUpR | RowKind::LineDnR)
    }

    pub fn is_redispatch(self) -> bool {
        matches!(
            self,
            RowKind::BalR
                | RowKind::PmaxR
                | RowKind::PminR
                | RowKind::ResUp
                | RowKind::ResDn
                | RowKind::RampAggUp
                | RowKind::RampAggDn
                | RowKind::LineUpR
                | RowKind::LineDnR
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowTag {
    pub kind: RowKind,
    /// Unit or line index, when the row has one.
    pub index: Option<usize>,
    pub t: usize,
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let who = match (self.kind, self.index) {
            (RowKind::LineUpB | RowKind::LineDnB | RowKind::LineUpR | RowKind::LineDnR, Some(l)) => format!("_l{l}"),
            (_, Some(i)) => format!("_i{i}"),
            (_, None) => String::new(),
        };
        write!(f, "{}{}_t{}", self.kind.prefix(), who, self.t + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    Commit(usize, usize),
    Startup(usize, usize),
    Shutdown(usize, usize),
    P(usize, usize),
    R(usize, usize),
}

impl Var {
    pub fn is_binary(self) -> bool {
        matches!(self, Var::Commit(..) | Var::Startup(..) | Var::Shutdown(..))
    }

    pub fn name(self) -> String {
        match self {
            Var::Commit(i, t) => format!("I_i{i}_t{}", t + 1),
            Var::Startup(i, t) => format!("u_i{i}_t{}", t + 1),
            Var::Shutdown(i, t) => format!("v_i{i}_t{}", t + 1),
            Var::P(i, t) => format!("P_i{i}_t{}", t + 1),
            Var::R(i, t) => format!("dP_i{i}_t{}", t + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UncVar {
    Wind(usize, usize),
    Load(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysRow {
    pub tag: RowTag,
    pub coeffs: Vec<(Var, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
    pub unc: Vec<(UncVar, f64)>,
}

/// Index of every decision variable in the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableCatalog {
    pub units: usize,
    pub horizon: usize,
    pub wind_farms: usize,
    pub loads: usize,
}

impl VariableCatalog {
    pub fn binaries(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.units).flat_map(move |i| {
            (0..self.horizon).flat_map(move |t| [Var::Commit(i, t), Var::Startup(i, t), Var::Shutdown(i, t)])
        })
    }

    pub fn continuous(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.units).flat_map(move |i| (0..self.horizon).flat_map(move |t| [Var::P(i, t), Var::R(i, t)]))
    }

    pub fn uncertain(&self) -> impl Iterator<Item = UncVar> + '_ {
        let w = (0..self.wind_farms).flat_map(move |j| (0..self.horizon).map(move |t| UncVar::Wind(j, t)));
        let d = (0..self.loads).flat_map(move |d| (0..self.horizon).map(move |t| UncVar::Load(d, t)));
        w.chain(d)
    }

    /// Dense slot of a continuous variable (`P` block then `ΔP` block).
    pub fn cont_slot(&self, v: Var) -> usize {
        match v {
            Var::P(i, t) => i * self.horizon + t,
            Var::R(i, t) => self.units * self.horizon + i * self.horizon + t,
            _ => panic!("not a continuous variable"),
        }
    }

    pub fn bin_slot(&self, v: Var) -> usize {
        let n = self.units * self.horizon;
        match v {
            Var::Commit(i, t) => i * self.horizon + t,
            Var::Startup(i, t) => n + i * self.horizon + t,
            Var::Shutdown(i, t) => 2 * n + i * self.horizon + t,
            _ => panic!("not a binary variable"),
        }
    }
}

/// Wind and load uncertainty sets of a case.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySets {
    pub wind: Vec<WindSet>,
    pub load: Vec<BoxSet>,
}

impl UncertaintySets {
    /// Every source fixed at its forecast.
    pub fn deterministic(case: &MarketCase) -> Self {
        UncertaintySets {
            wind: case.wind_farms.iter().map(|w| WindSet::fixed(&w.forecast)).collect(),
            load: case.loads.iter().map(|l| BoxSet::load(&l.forecast, &vec![0.0; case.horizon], 0)).collect(),
        }
    }

    /// Load boxes from the case's deviation data with budget `gamma`.
    pub fn case_loads(case: &MarketCase, gamma: usize) -> Vec<BoxSet> {
        case.loads.iter().map(|l| BoxSet::load(&l.forecast, &l.max_deviation, gamma)).collect()
    }

    pub fn check(&self, case: &MarketCase) -> Result<(), FormulationError> {
        if self.wind.len() != case.wind_farms.len() || self.load.len() != case.loads.len() {
            return Err(FormulationError::Dimension(format!(
                "{} wind sets / {} load sets for {} farms / {} loads",
                self.wind.len(),
                self.load.len(),
                case.wind_farms.len(),
                case.loads.len()
            )));
        }
        if self.wind.iter().any(|w| w.horizon() != case.horizon) || self.load.iter().any(|l| l.horizon() != case.horizon) {
            return Err(FormulationError::Dimension(format!("sets must span {} hours", case.horizon)));
        }
        Ok(())
    }
}

/// Realized wind and load trajectories (MW), one per farm / load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub wind: Vec<Vec<f64>>,
    pub load: Vec<Vec<f64>>,
}

impl Realization {
    pub fn forecast(case: &MarketCase) -> Self {
        Realization {
            wind: case.wind_farms.iter().map(|w| w.forecast.clone()).collect(),
            load: case.loads.iter().map(|l| l.forecast.clone()).collect(),
        }
    }

    pub fn deviation(&self, case: &MarketCase, u: UncVar) -> f64 {
        match u {
            UncVar::Wind(j, t) => self.wind[j][t] - case.wind_farms[j].forecast[t],
            UncVar::Load(d, t) => self.load[d][t] - case.loads[d].forecast[t],
        }
    }

    pub fn check(&self, case: &MarketCase) -> Result<(), FormulationError> {
        let ok = self.wind.len() == case.wind_farms.len()
            && self.load.len() == case.loads.len()
            && self.wind.iter().chain(&self.load).all(|v| v.len() == case.horizon);
        if ok {
            Ok(())
        } else {
            Err(FormulationError::Dimension("realization does not match the case".into()))
        }
    }
}

/// Fixed commitment schedule, `[unit][hour]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub on: Vec<Vec<bool>>,
    pub startup: Vec<Vec<bool>>,
    pub shutdown: Vec<Vec<bool>>,
}

impl Commitment {
    /// Startups and shutdowns implied by an on/off schedule.
    pub fn from_on(case: &MarketCase, on: Vec<Vec<bool>>) -> Self {
        let mut startup = vec![vec![false; case.horizon]; case.units.len()];
        let mut shutdown = startup.clone();
        for (i, u) in case.units.iter().enumerate() {
            let mut prev = u.initial_status.on;
            for t in 0..case.horizon {
                startup[i][t] = on[i][t] && !prev;
                shutdown[i][t] = !on[i][t] && prev;
                prev = on[i][t];
            }
        }
        Commitment { on, startup, shutdown }
    }

    pub fn all_on(case: &MarketCase) -> Self {
        Self::from_on(case, vec![vec![true; case.horizon]; case.units.len()])
    }

    pub fn value(&self, v: Var) -> f64 {
        let b = match v {
            Var::Commit(i, t) => self.on[i][t],
            Var::Startup(i, t) => self.startup[i][t],
            Var::Shutdown(i, t) => self.shutdown[i][t],
            _ => panic!("not a binary variable"),
        };
        if b {
            1.0
        } else {
            0.0
        }
    }

    /// Read a commitment from a solution, `cols` giving the column of each
    /// binary by `VariableCatalog::bin_slot`.
    pub fn from_solution(cat: &VariableCatalog, cols: &[usize], x: &[f64]) -> Self {
        let g = |v: Var| x[cols[cat.bin_slot(v)]] > 0.5;
        let grid = |f: &dyn Fn(usize, usize) -> Var| {
            (0..cat.units).map(|i| (0..cat.horizon).map(|t| g(f(i, t))).collect()).collect()
        };
        Commitment { on: grid(&Var::Commit), startup: grid(&Var::Startup), shutdown: grid(&Var::Shutdown) }
    }

    /// Commitment-only cost.
    pub fn transition_cost(&self, case: &MarketCase) -> f64 {
        let mut c = 0.0;
        for (i, u) in case.units.iter().enumerate() {
            for t in 0..case.horizon {
                if self.startup[i][t] {
                    c += u.cost_startup;
                }
                if self.shutdown[i][t] {
                    c += u.cost_shutdown;
                }
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    pub catalog: VariableCatalog,
    pub variant: ModelVariant,
    pub rows: Vec<SysRow>,
    /// Objective terms on binaries (startup/shutdown costs).
    pub first_stage_cost: Vec<(Var, f64)>,
    /// Objective terms on dispatch variables.
    pub second_stage_cost: Vec<(Var, f64)>,
}

fn ramp_rhs_terms(rate: f64, special: f64, flag: Var) -> (f64, Vec<(Var, f64)>) {
    // rate·(1 − flag) + special·flag, as "constant + coefficient·flag"
    (rate, vec![(flag, special - rate)])
}

/// Build the robust unit-commitment constraint system of a case.
pub fn build_ruc(case: &MarketCase, sets: &UncertaintySets, variant: ModelVariant) -> Result<ConstraintSystem, FormulationError> {
    sets.check(case)?;
    build_system(case, variant)
}

pub fn build_system(case: &MarketCase, variant: ModelVariant) -> Result<ConstraintSystem, FormulationError> {
    let n_t = case.horizon;
    let cat = VariableCatalog { units: case.units.len(), horizon: n_t, wind_farms: case.wind_farms.len(), loads: case.loads.len() };
    for u in &case.units {
        if u.p_min > u.p_max {
            return Err(FormulationError::Build(format!("unit {}: p_min exceeds p_max", u.name)));
        }
    }
    let mut rows = Vec::new();
    let mut push = |kind: RowKind, index: Option<usize>, t: usize, coeffs: Vec<(Var, f64)>, sense: RowSense, rhs: f64, unc: Vec<(UncVar, f64)>| {
        rows.push(SysRow { tag: RowTag { kind, index, t }, coeffs, sense, rhs, unc });
    };
    let units = &case.units;
    let gsf = &case.gsf;

    for t in 0..n_t {
        // Basic balance: Σ P = Σ load − Σ wind at forecast.
        let rhs = case.total_load_forecast(t) - case.total_wind_forecast(t);
        push(RowKind::BalB, None, t, (0..units.len()).map(|i| (Var::P(i, t), 1.0)).collect(), RowSense::Eq, rhs, vec![]);

        // Redispatch balance: Σ ΔP = Σ ΔP^d − Σ ΔP^w.
        let mut unc = Vec::new();
        for j in 0..case.wind_farms.len() {
            unc.push((UncVar::Wind(j, t), -1.0));
        }
        for d in 0..case.loads.len() {
            unc.push((UncVar::Load(d, t), 1.0));
        }
        push(RowKind::BalR, None, t, (0..units.len()).map(|i| (Var::R(i, t), 1.0)).collect(), RowSense::Eq, 0.0, unc);

        for (i, u) in units.iter().enumerate() {
            let (p, r, on) = (Var::P(i, t), Var::R(i, t), Var::Commit(i, t));
            push(RowKind::PmaxB, Some(i), t, vec![(p, -1.0), (on, u.p_max)], RowSense::Ge, 0.0, vec![]);
            push(RowKind::PminB, Some(i), t, vec![(p, 1.0), (on, -u.p_min)], RowSense::Ge, 0.0, vec![]);
            push(RowKind::PmaxR, Some(i), t, vec![(p, -1.0), (r, -1.0), (on, u.p_max)], RowSense::Ge, 0.0, vec![]);
            push(RowKind::PminR, Some(i), t, vec![(p, 1.0), (r, 1.0), (on, -u.p_min)], RowSense::Ge, 0.0, vec![]);

            if variant.include_ramping {
                let su = Var::Startup(i, t);
                let sd = Var::Shutdown(i, t);
                let (up_c, up_flag) = ramp_rhs_terms(u.ramp_up, u.startup_ramp, su);
                let (dn_c, dn_flag) = ramp_rhs_terms(u.ramp_down, u.shutdown_ramp, sd);
                // P_t − P_{t−1} ≤ up  →  −P_t + P_{t−1} + k·u ≥ −r
                let mut c = vec![(p, -1.0)];
                let mut rhs_up = -up_c;
                let mut rhs_dn = -dn_c;
                if t > 0 {
                    c.push((Var::P(i, t - 1), 1.0));
                } else {
                    rhs_up -= u.initial_output;
                    rhs_dn += u.initial_output;
                }
                c.extend(up_flag.iter().cloned());
                push(RowKind::RampUpB, Some(i), t, c, RowSense::Ge, rhs_up, vec![]);
                // P_{t−1} − P_t ≤ dn  →  P_t − P_{t−1} + k·v ≥ −r
                let mut c = vec![(p, 1.0)];
                if t > 0 {
                    c.push((Var::P(i, t - 1), -1.0));
                }
                c.extend(dn_flag.iter().cloned());
                push(RowKind::RampDnB, Some(i), t, c, RowSense::Ge, rhs_dn, vec![]);

                // ΔP ≤ up, ΔP ≥ −dn
                let mut c = vec![(r, -1.0)];
                c.extend(up_flag.iter().cloned());
                push(RowKind::ResUp, Some(i), t, c, RowSense::Ge, -up_c, vec![]);
                let mut c = vec![(r, 1.0)];
                c.extend(dn_flag.iter().cloned());
                push(RowKind::ResDn, Some(i), t, c, RowSense::Ge, -dn_c, vec![]);

                if variant.include_overall_ramp {
                    let mut c = vec![(p, -1.0), (r, -1.0)];
                    let mut rhs_up = -up_c;
                    let mut rhs_dn = -dn_c;
                    if t > 0 {
                        c.push((Var::P(i, t - 1), 1.0));
                        c.push((Var::R(i, t - 1), 1.0));
                    } else {
                        rhs_up -= u.initial_output;
                        rhs_dn += u.initial_output;
                    }
                    c.extend(up_flag.iter().cloned());
                    push(RowKind::RampAggUp, Some(i), t, c, RowSense::Ge, rhs_up, vec![]);
                    let mut c = vec![(p, 1.0), (r, 1.0)];
                    if t > 0 {
                        c.push((Var::P(i, t - 1), -1.0));
                        c.push((Var::R(i, t - 1), -1.0));
                    }
                    c.extend(dn_flag.iter().cloned());
                    push(RowKind::RampAggDn, Some(i), t, c, RowSense::Ge, rhs_dn, vec![]);
                }
            }
        }

        for (l, line) in case.lines.iter().enumerate() {
            let cap = line.capacity;
            // fixed injections from forecast wind and load
            let mut fixed = 0.0;
            for w in &case.wind_farms {
                fixed += gsf[l][w.bus] * w.forecast[t];
            }
            for d in &case.loads {
                fixed -= gsf[l][d.bus] * d.forecast[t];
            }
            let p_terms: Vec<(Var, f64)> = units
                .iter()
                .enumerate()
                .filter(|(_, u)| gsf[l][u.bus] != 0.0)
                .map(|(i, u)| (Var::P(i, t), gsf[l][u.bus]))
                .collect();
            let pr_terms: Vec<(Var, f64)> = units
                .iter()
                .enumerate()
                .filter(|(_, u)| gsf[l][u.bus] != 0.0)
                .flat_map(|(i, u)| [(Var::P(i, t), gsf[l][u.bus]), (Var::R(i, t), gsf[l][u.bus])])
                .collect();
            let neg = |v: &[(Var, f64)]| v.iter().map(|&(x, a)| (x, -a)).collect::<Vec<_>>();
            // F − flow ≥ 0 and flow + F ≥ 0
            push(RowKind::LineUpB, Some(l), t, neg(&p_terms), RowSense::Ge, fixed - cap, vec![]);
            push(RowKind::LineDnB, Some(l), t, p_terms, RowSense::Ge, -cap - fixed, vec![]);
            let mut unc = Vec::new();
            for (j, w) in case.wind_farms.iter().enumerate() {
                let g = gsf[l][w.bus];
                if g != 0.0 {
                    unc.push((UncVar::Wind(j, t), g));
                }
            }
            for (d, ld) in case.loads.iter().enumerate() {
                let g = gsf[l][ld.bus];
                if g != 0.0 {
                    unc.push((UncVar::Load(d, t), -g));
                }
            }
            let unc_neg: Vec<(UncVar, f64)> = unc.iter().map(|&(x, a)| (x, -a)).collect();
            push(RowKind::LineUpR, Some(l), t, neg(&pr_terms), RowSense::Ge, fixed - cap, unc);
            push(RowKind::LineDnR, Some(l), t, pr_terms, RowSense::Ge, -cap - fixed, unc_neg);
        }
    }

    // Commitment logic, with the pre-horizon history folded into constants.
    for (i, u) in units.iter().enumerate() {
        let init_on = u.initial_status.on;
        let h = u.initial_status.hours as i64;
        // hour (0-based, may be negative) of the last transition before t = 0
        let last_switch = -h;
        for t in 0..n_t {
            let mut c = vec![(Var::Startup(i, t), 1.0), (Var::Shutdown(i, t), -1.0), (Var::Commit(i, t), -1.0)];
            let mut rhs = 0.0;
            if t > 0 {
                c.push((Var::Commit(i, t - 1), 1.0));
            } else if init_on {
                rhs = -1.0;
            }
            push(RowKind::Transition, Some(i), t, c, RowSense::Eq, rhs, vec![]);
            push(
                RowKind::Exclusive,
                Some(i),
                t,
                vec![(Var::Startup(i, t), -1.0), (Var::Shutdown(i, t), -1.0)],
                RowSense::Ge,
                -1.0,
                vec![],
            );

            // I_t − Σ_{τ=t−UT+1}^{t} u_τ ≥ 0
            let lo = t as i64 - u.min_up as i64 + 1;
            let mut c = vec![(Var::Commit(i, t), 1.0)];
            for tau in lo.max(0)..=t as i64 {
                c.push((Var::Startup(i, tau as usize), -1.0));
            }
            let rhs = if init_on && last_switch >= lo && last_switch < 0 { 1.0 } else { 0.0 };
            push(RowKind::MinUp, Some(i), t, c, RowSense::Ge, rhs, vec![]);
            // 1 − I_t − Σ v_τ ≥ 0
            let lo = t as i64 - u.min_down as i64 + 1;
            let mut c = vec![(Var::Commit(i, t), -1.0)];
            for tau in lo.max(0)..=t as i64 {
                c.push((Var::Shutdown(i, tau as usize), -1.0));
            }
            let pre = if !init_on && last_switch >= lo && last_switch < 0 { 1.0 } else { 0.0 };
            push(RowKind::MinDn, Some(i), t, c, RowSense::Ge, pre - 1.0, vec![]);
        }
    }

    let mut first_stage_cost = Vec::new();
    let mut second_stage_cost = Vec::new();
    for (i, u) in units.iter().enumerate() {
        for t in 0..n_t {
            first_stage_cost.push((Var::Startup(i, t), u.cost_startup));
            first_stage_cost.push((Var::Shutdown(i, t), u.cost_shutdown));
            second_stage_cost.push((Var::P(i, t), u.cost_energy));
            if variant.include_reserve_cost {
                second_stage_cost.push((Var::R(i, t), u.cost_energy));
            }
        }
    }
    Ok(ConstraintSystem { catalog: cat, variant, rows, first_stage_cost, second_stage_cost })
}

/// How commitment binaries enter an emitted model.
pub enum Binaries<'a> {
    /// Column index of every binary, by `VariableCatalog::bin_slot`.
    Columns(&'a [usize]),
    Fixed(&'a Commitment),
}

/// Result of emitting the dispatch rows of one scenario.
#[derive(Debug, Clone)]
pub struct Emitted {
    /// Column of each continuous variable, by `VariableCatalog::cont_slot`.
    pub cont_cols: Vec<usize>,
    /// Request row of each system row (`None` for skipped rows).
    pub row_of: Vec<Option<usize>>,
    /// Second-stage cost terms as `(column, coefficient)`.
    pub cost_terms: Vec<(usize, f64)>,
    /// Penalty slack columns, if any.
    pub slack_cols: Vec<usize>,
    /// Binary columns by `bin_slot`; empty when the commitment is fixed.
    pub bin_cols: Vec<usize>,
}

impl ConstraintSystem {
    pub fn count(&self, kind: RowKind) -> usize {
        self.rows.iter().filter(|r| r.kind() == kind).count()
    }

    pub fn kinds(&self) -> BTreeSet<RowKind> {
        self.rows.iter().map(|r| r.kind()).collect()
    }

    pub fn find(&self, tag: &RowTag) -> Option<usize> {
        self.rows.iter().position(|r| r.tag == *tag)
    }

    /// Right-hand sides with the deviations of `real` substituted.
    pub fn bind_uncertainty(&self, case: &MarketCase, real: &Realization) -> Result<Vec<f64>, FormulationError> {
        real.check(case)?;
        Ok(self.rows.iter().map(|r| r.rhs + r.unc.iter().map(|&(u, g)| g * real.deviation(case, u)).sum::<f64>()).collect())
    }

    /// Check a commitment against the logic and minimum up/down rows.
    pub fn check_commitment(&self, c: &Commitment) -> Result<(), FormulationError> {
        if c.on.len() != self.catalog.units || c.on.iter().any(|r| r.len() != self.catalog.horizon) {
            return Err(FormulationError::Dimension("commitment does not match the case".into()));
        }
        let mut bad = Vec::new();
        for r in self.rows.iter().filter(|r| r.kind().is_commitment()) {
            let lhs: f64 = r.coeffs.iter().map(|&(v, a)| a * c.value(v)).sum();
            let ok = match r.sense {
                RowSense::Ge => lhs >= r.rhs - 1e-9,
                RowSense::Eq => (lhs - r.rhs).abs() <= 1e-9,
            };
            if !ok {
                bad.push((r.tag.index.unwrap_or(0), r.tag.t, r.kind()));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(FormulationError::Commitment(bad))
        }
    }

    /// Add the dispatch rows of one scenario to `req`. Commitment rows are
    /// never emitted here; see [`ConstraintSystem::emit_commitment`].
    ///
    /// With `penalty = Some(c)`, the uncertainty-driven rows get slack
    /// columns of cost `c` so the model stays feasible for any realization.
    pub fn emit_dispatch(
        &self,
        req: &mut SolveRequest,
        bins: &Binaries,
        rhs: &[f64],
        penalty: Option<f64>,
        suffix: &str,
    ) -> Emitted {
        let cat = &self.catalog;
        let mut cont_cols = vec![0; 2 * cat.units * cat.horizon];
        for v in cat.continuous() {
            cont_cols[cat.cont_slot(v)] = req.add_col(format!("{}{suffix}", v.name()), 0.0, f64::NEG_INFINITY, f64::INFINITY);
        }
        let mut row_of = vec![None; self.rows.len()];
        let mut slack_cols = Vec::new();
        for (k, r) in self.rows.iter().enumerate() {
            if r.kind().is_commitment() {
                continue;
            }
            let mut coeffs = Vec::with_capacity(r.coeffs.len());
            let mut b = rhs[k];
            for &(v, a) in &r.coeffs {
                if v.is_binary() {
                    match bins {
                        Binaries::Columns(cols) => coeffs.push((cols[cat.bin_slot(v)], a)),
                        Binaries::Fixed(c) => b -= a * c.value(v),
                    }
                } else {
                    coeffs.push((cont_cols[cat.cont_slot(v)], a));
                }
            }
            if let (Some(pen), true) = (penalty, r.kind().is_uncertain()) {
                let s = req.add_col(format!("slack_{}{suffix}", r.tag), pen, 0.0, f64::INFINITY);
                coeffs.push((s, 1.0));
                slack_cols.push(s);
                if r.sense == RowSense::Eq {
                    let s2 = req.add_col(format!("slackn_{}{suffix}", r.tag), pen, 0.0, f64::INFINITY);
                    coeffs.push((s2, -1.0));
                    slack_cols.push(s2);
                }
            }
            let upper = if r.sense == RowSense::Eq { b } else { f64::INFINITY };
            row_of[k] = Some(req.add_row(format!("{}{suffix}", r.tag), coeffs, b, upper));
        }
        let cost_terms = self.second_stage_cost.iter().map(|&(v, c)| (cont_cols[cat.cont_slot(v)], c)).collect();
        Emitted { cont_cols, row_of, cost_terms, slack_cols, bin_cols: Vec::new() }
    }

    /// Binary columns plus the commitment-only rows; returns the column of
    /// every binary by `bin_slot`.
    pub fn emit_commitment(&self, req: &mut SolveRequest) -> Vec<usize> {
        let cat = &self.catalog;
        let mut cols = vec![0; 3 * cat.units * cat.horizon];
        let costs: std::collections::HashMap<Var, f64> = self.first_stage_cost.iter().cloned().collect();
        for v in cat.binaries() {
            cols[cat.bin_slot(v)] = req.add_int_col(v.name(), costs.get(&v).copied().unwrap_or(0.0), 0.0, 1.0);
        }
        for r in self.rows.iter().filter(|r| r.kind().is_commitment()) {
            let coeffs = r.coeffs.iter().map(|&(v, a)| (cols[cat.bin_slot(v)], a)).collect();
            let upper = if r.sense == RowSense::Eq { r.rhs } else { f64::INFINITY };
            req.add_row(r.tag.to_string(), coeffs, r.rhs, upper);
        }
        cols
    }

    /// Single-scenario model: the deterministic unit commitment when
    /// `commitment` is `None`, the dispatch LP otherwise.
    pub fn single_scenario(&self, rhs: &[f64], commitment: Option<&Commitment>, penalty: Option<f64>) -> (SolveRequest, Emitted) {
        let mut req = SolveRequest::new(Sense::Minimize);
        let em = match commitment {
            None => {
                let cols = self.emit_commitment(&mut req);
                let mut em = self.emit_dispatch(&mut req, &Binaries::Columns(&cols), rhs, penalty, "");
                em.bin_cols = cols;
                em
            }
            Some(c) => {
                let em = self.emit_dispatch(&mut req, &Binaries::Fixed(c), rhs, penalty, "");
                req.objective_offset = c.transition_cost_from(self);
                em
            }
        };
        for &(col, c) in &em.cost_terms {
            req.objective[col] += c;
        }
        (req, em)
    }

    /// LP-format text of the single-scenario model.
    pub fn to_lp(&self, rhs: &[f64], commitment: Option<&Commitment>) -> String {
        let (req, _) = self.single_scenario(rhs, commitment, None);
        lp_format::write(&req).expect("emitted model is well formed")
    }
}

impl Commitment {
    pub fn transition_cost_from(&self, sys: &ConstraintSystem) -> f64 {
        sys.first_stage_cost.iter().map(|&(v, c)| c * self.value(v)).sum()
    }
}

impl SysRow {
    pub fn kind(&self) -> RowKind {
        self.tag.kind
    }
}

/// Validate a commitment against the system and return the dispatch LP at a
/// realization.
pub fn fix_commitment(
    sys: &ConstraintSystem,
    case: &MarketCase,
    commitment: &Commitment,
    real: &Realization,
) -> Result<(SolveRequest, Emitted), FormulationError> {
    sys.check_commitment(commitment)?;
    let rhs = sys.bind_uncertainty(case, real)?;
    Ok(sys.single_scenario(&rhs, Some(commitment), None))
}
