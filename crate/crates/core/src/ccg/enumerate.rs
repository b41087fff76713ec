//! Exhaustive reference solver for tiny instances: every feasible commitment
//! against every vertex of the uncertainty sets.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::combinations;
use super::{solve_rscuc, CcgError, CcgOptions};
use crate::case::{Bus, InitialStatus, Line, Load, MarketCase, Unit, WindFarm};
use crate::formulation::{build_ruc, Commitment, ConstraintSystem, ModelVariant, Realization, UncertaintySets};
use crate::imeus::{BoxSet, EllipsoidSubset, Imeus, WindSet};
use crate::solver::{solve, Status};

const GRID_DEG: usize = 360;
const GOLDEN_ITERS: usize = 60;

#[derive(Debug, Clone)]
pub struct EnumResult {
    pub objective: f64,
    pub commitment: Commitment,
    pub worst: Realization,
    pub lps: usize,
}

/// One farm's candidate trajectories, or a 2-D ellipse searched by angle.
enum Candidates {
    Points(Vec<Vec<f64>>),
    Ellipse { mu: DVector<f64>, k: DMatrix<f64>, radius: f64 },
}

impl Candidates {
    fn at(&self, theta: f64) -> Vec<f64> {
        match self {
            Candidates::Points(_) => unreachable!(),
            Candidates::Ellipse { mu, k, radius } => {
                let d = DVector::from_column_slice(&[theta.cos(), theta.sin()]);
                (mu + k * d * *radius).iter().copied().collect()
            }
        }
    }
}

fn box_vertices(lo: &[f64], hi: &[f64], pins: &[bool], forecast: &[f64]) -> Vec<Vec<f64>> {
    let free: Vec<usize> = (0..lo.len()).filter(|&t| !pins[t]).collect();
    let mut out = Vec::with_capacity(1 << free.len());
    for mask in 0..(1usize << free.len()) {
        let mut v: Vec<f64> = forecast.to_vec();
        for (b, &t) in free.iter().enumerate() {
            v[t] = if mask >> b & 1 == 1 { hi[t] } else { lo[t] };
        }
        out.push(v);
    }
    out
}

fn pin_patterns(t: usize, gamma: usize) -> Vec<Vec<bool>> {
    combinations(t, gamma)
        .into_iter()
        .map(|c| {
            let mut p = vec![false; t];
            c.into_iter().for_each(|k| p[k] = true);
            p
        })
        .collect()
}

fn wind_candidates(ws: &WindSet) -> Result<Vec<Candidates>, CcgError> {
    let t = ws.horizon();
    let f = ws.forecast();
    let mut out = Vec::new();
    match ws {
        WindSet::Box { set, .. } => {
            let mut pts = Vec::new();
            for pins in pin_patterns(t, ws.gamma()) {
                pts.extend(box_vertices(&set.lower, &set.upper, &pins, f));
            }
            out.push(Candidates::Points(pts));
        }
        WindSet::Imeus(s) => {
            if s.subsets.len() != 1 || s.horizon > 2 {
                return Err(CcgError::Other("enumeration supports a single ellipse of at most two hours".into()));
            }
            let e = &s.subsets[0];
            let k = e.r.clone().cholesky().ok_or(CcgError::Other("ellipse matrix not positive definite".into()))?.l();
            let radius = e.c_a.sqrt();
            for pins in pin_patterns(t, ws.gamma()) {
                let free: Vec<usize> = (0..t).filter(|&h| !pins[h]).collect();
                match free.len() {
                    0 => out.push(Candidates::Points(vec![f.to_vec()])),
                    1 => {
                        let h = free[0];
                        let ext = e.half_extent(h);
                        let pts = [e.mu[h] - ext, e.mu[h] + ext]
                            .iter()
                            .map(|&v| {
                                let mut p = f.to_vec();
                                p[h] = v;
                                p
                            })
                            .collect();
                        out.push(Candidates::Points(pts));
                    }
                    _ => {
                        let c = Candidates::Ellipse { mu: e.mu.clone(), k: k.clone(), radius };
                        for deg in 0..GRID_DEG {
                            let p = c.at((deg as f64).to_radians());
                            if p.iter().any(|&v| v < 0.0 || v > s.capacity) {
                                return Err(CcgError::Other("ellipse leaves the capacity box".into()));
                            }
                        }
                        out.push(c);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn load_candidates(ls: &BoxSet) -> Vec<Vec<f64>> {
    let t = ls.horizon();
    let dev = ls.deviation.clone().unwrap_or_else(|| ls.widths());
    let budget = ls.budget.unwrap_or(t).min(t);
    let mut out = Vec::new();
    for b in 0..=budget {
        for c in combinations(t, b) {
            let mut v = ls.lower.clone();
            c.into_iter().for_each(|h| v[h] += dev[h]);
            out.push(v);
        }
    }
    out
}

struct Evaluator<'a> {
    case: &'a MarketCase,
    sys: &'a ConstraintSystem,
    lps: usize,
}

impl Evaluator<'_> {
    /// Total cost of `x` at a realization; infinite when infeasible.
    fn value(&mut self, x: &Commitment, real: &Realization) -> Result<f64, CcgError> {
        let rhs = self.sys.bind_uncertainty(self.case, real)?;
        let (req, _) = self.sys.single_scenario(&rhs, Some(x), None);
        self.lps += 1;
        let res = solve(&req)?;
        match res.status {
            Status::Optimal => Ok(res.objective),
            Status::Infeasible => Ok(f64::INFINITY),
            s => Err(CcgError::Other(format!("enumeration LP ended with status {s:?}"))),
        }
    }
}

type Best = (f64, Option<Realization>);

/// Record `real` if it beats the running maximum; true once past `cutoff`.
fn consider(ev: &mut Evaluator, x: &Commitment, real: Realization, best: &mut Best, cutoff: f64) -> Result<bool, CcgError> {
    let v = ev.value(x, &real)?;
    if v > best.0 {
        *best = (v, Some(real));
    }
    Ok(best.0 >= cutoff)
}

fn product<T: Clone>(choices: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![vec![]];
    for opts in choices {
        out = out
            .iter()
            .flat_map(|c| {
                opts.iter().map(move |o| {
                    let mut n = c.clone();
                    n.push(o.clone());
                    n
                })
            })
            .collect();
    }
    out
}

/// Worst realization for `x`, stopping once the value reaches `cutoff`.
fn worst_for(
    ev: &mut Evaluator,
    x: &Commitment,
    wind: &[Vec<Candidates>],
    loads: &[Vec<Vec<f64>>],
    cutoff: f64,
) -> Result<Best, CcgError> {
    let mut best: Best = (f64::NEG_INFINITY, None);
    let groups = product(&wind.iter().map(|f| (0..f.len()).collect()).collect::<Vec<Vec<usize>>>());
    let load_pats = product(loads);
    for g in &groups {
        // per farm: a fixed trajectory or an angle-searched ellipse
        let per_farm: Vec<Vec<Option<Vec<f64>>>> = g
            .iter()
            .enumerate()
            .map(|(j, &k)| match &wind[j][k] {
                Candidates::Points(p) => p.iter().cloned().map(Some).collect(),
                Candidates::Ellipse { .. } => vec![None],
            })
            .collect();
        let ell = g.iter().enumerate().find(|(j, k)| matches!(wind[*j][**k], Candidates::Ellipse { .. })).map(|(j, &k)| &wind[j][k]);
        for load in &load_pats {
            for combo in product(&per_farm) {
                let traj = |theta: f64| -> Vec<Vec<f64>> {
                    combo.iter().map(|o| o.clone().unwrap_or_else(|| ell.unwrap().at(theta))).collect()
                };
                let Some(_) = ell else {
                    let real = Realization { wind: traj(0.0), load: load.clone() };
                    if consider(ev, x, real, &mut best, cutoff)? {
                        return Ok(best);
                    }
                    continue;
                };
                let mut f = |ev: &mut Evaluator, theta: f64| ev.value(x, &Realization { wind: traj(theta), load: load.clone() });
                let step = std::f64::consts::TAU / GRID_DEG as f64;
                let mut grid = Vec::with_capacity(GRID_DEG);
                for d in 0..GRID_DEG {
                    grid.push(f(ev, d as f64 * step)?);
                }
                let mut thetas = Vec::new();
                for d in 0..GRID_DEG {
                    let (p, n) = (grid[(d + GRID_DEG - 1) % GRID_DEG], grid[(d + 1) % GRID_DEG]);
                    if grid[d] >= p && grid[d] >= n {
                        let at = d as f64 * step;
                        thetas.push(golden(ev, &mut f, at - step, at + step, grid[d], at)?);
                    }
                }
                for th in thetas {
                    let real = Realization { wind: traj(th), load: load.clone() };
                    if consider(ev, x, real, &mut best, cutoff)? {
                        return Ok(best);
                    }
                }
            }
        }
    }
    Ok(best)
}

fn golden(
    ev: &mut Evaluator,
    f: &mut impl FnMut(&mut Evaluator, f64) -> Result<f64, CcgError>,
    mut a: f64,
    mut b: f64,
    seed_val: f64,
    seed_at: f64,
) -> Result<f64, CcgError> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(ev, c)?;
    let mut fd = f(ev, d)?;
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(ev, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(ev, d)?;
        }
    }
    let mid = 0.5 * (a + b);
    Ok(if fc.max(fd) >= seed_val { mid } else { seed_at })
}

/// All on/off schedules passing the logic and minimum up/down rows.
pub fn feasible_commitments(case: &MarketCase, sys: &ConstraintSystem) -> Vec<Commitment> {
    let n = case.units.len() * case.horizon;
    assert!(n <= 16, "enumeration limited to 16 binaries");
    (0..1usize << n)
        .filter_map(|mask| {
            let on = (0..case.units.len())
                .map(|i| (0..case.horizon).map(|t| mask >> (i * case.horizon + t) & 1 == 1).collect())
                .collect();
            let c = Commitment::from_on(case, on);
            sys.check_commitment(&c).ok().map(|_| c)
        })
        .collect()
}

/// Robust optimum by brute force. Errors on instances whose every
/// commitment fails some scenario.
pub fn enumerate_rscuc(case: &MarketCase, sets: &UncertaintySets, variant: ModelVariant) -> Result<EnumResult, CcgError> {
    let sys = build_ruc(case, sets, variant)?;
    let wind = sets.wind.iter().map(wind_candidates).collect::<Result<Vec<_>, _>>()?;
    let loads: Vec<Vec<Vec<f64>>> = sets.load.iter().map(load_candidates).collect();
    let mut ev = Evaluator { case, sys: &sys, lps: 0 };
    // cheap ordering: cost at the forecast
    let fc = Realization::forecast(case);
    let mut xs: Vec<(f64, Commitment)> = Vec::new();
    for x in feasible_commitments(case, &sys) {
        let v = ev.value(&x, &fc)?;
        if v.is_finite() {
            xs.push((v, x));
        }
    }
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, Commitment, Realization)> = None;
    for (_, x) in xs {
        let cutoff = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let (v, real) = worst_for(&mut ev, &x, &wind, &loads, cutoff)?;
        if v < cutoff {
            best = Some((v, x, real.expect("at least one candidate")));
        }
    }
    match best {
        Some((objective, commitment, worst)) if objective.is_finite() => {
            Ok(EnumResult { objective, commitment, worst, lps: ev.lps })
        }
        _ => Err(CcgError::MasterInfeasible),
    }
}

/// Seeded random tiny instance: up to 2 units, up to 2 buses, one farm,
/// one load, 2 to 4 hours.
pub fn tiny_instance(seed: u64) -> (MarketCase, UncertaintySets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(2..=4usize);
    let two_bus = rng.random_bool(0.5);
    let buses: Vec<Bus> = (0..if two_bus { 2 } else { 1 }).map(|i| Bus { id: i, name: format!("B{}", i + 1) }).collect();
    let load_bus = buses.len() - 1;
    let n_units = rng.random_range(1..=2usize);
    let units: Vec<Unit> = (0..n_units)
        .map(|i| {
            let p_max = rng.random_range(90.0..140.0f64).round();
            let p_min = rng.random_range(0.0..25.0f64).round();
            let ramp = rng.random_range(35.0..90.0f64).round();
            let on = i == 0 || rng.random_bool(0.5);
            Unit {
                id: i,
                name: format!("G{}", i + 1),
                bus: if two_bus { i % 2 } else { 0 },
                cost_energy: rng.random_range(10.0..40.0f64).round(),
                cost_startup: rng.random_range(20.0..300.0f64).round(),
                cost_shutdown: rng.random_range(0.0..50.0f64).round(),
                p_min,
                p_max,
                ramp_up: ramp,
                ramp_down: ramp,
                startup_ramp: p_max.max(p_min),
                shutdown_ramp: p_max.max(p_min),
                min_up: rng.random_range(1..=2),
                min_down: rng.random_range(1..=2),
                initial_status: InitialStatus { on, hours: 3 },
                initial_output: if on { p_min.max(40.0).min(p_max) } else { 0.0 },
            }
        })
        .collect();
    let load_f: Vec<f64> = (0..t).map(|_| rng.random_range(50.0..110.0f64).round()).collect();
    let load_dev: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..15.0f64).round()).collect();
    let wind_cap = 80.0;
    let wind_f: Vec<f64> = (0..t).map(|_| rng.random_range(20.0..50.0f64).round()).collect();
    let lines = if two_bus {
        vec![Line {
            id: 0,
            name: "L1".into(),
            from_bus: 0,
            to_bus: 1,
            reactance: Some(0.1),
            capacity: rng.random_range(40.0..120.0f64).round(),
        }]
    } else {
        vec![]
    };
    let mut case = MarketCase {
        horizon: t,
        buses,
        lines,
        units,
        wind_farms: vec![WindFarm { id: 0, name: "W1".into(), bus: 0, capacity: wind_cap, forecast: wind_f.clone() }],
        loads: vec![Load { id: 0, name: "D1".into(), bus: load_bus, forecast: load_f, max_deviation: load_dev }],
        gsf: Vec::new(),
        slack_bus: 0,
    };
    case.gsf = case.compute_gsf().expect("tiny network is connected");
    let load_budget = rng.random_range(0..=t);
    let wind = if t == 2 && rng.random_bool(0.5) {
        let s = rng.random_range(3.0..8.0f64);
        let rho = rng.random_range(-0.6..0.8f64);
        let r = DMatrix::from_row_slice(2, 2, &[s * s, rho * s * s, rho * s * s, s * s]);
        let k = r.clone().cholesky().unwrap().l();
        let l = k.try_inverse().unwrap();
        let mu = DVector::from_iterator(2, wind_f.iter().map(|f| f + rng.random_range(-3.0..3.0)));
        let sub = EllipsoidSubset { start: 0, dim: 2, mu: mu.clone(), r, c_a: 4.605, l };
        WindSet::Imeus(Imeus {
            horizon: 2,
            od: 2,
            alpha: 0.9,
            gamma: rng.random_range(0..=1),
            forecast: wind_f,
            capacity: wind_cap,
            subsets: vec![sub],
        })
    } else {
        let frac = rng.random_range(0.1..0.4);
        WindSet::Box {
            set: BoxSet::new(
                wind_f.iter().map(|f| f * (1.0 - frac)).collect(),
                wind_f.iter().map(|f| (f * (1.0 + frac)).min(wind_cap)).collect(),
            ),
            forecast: wind_f,
            gamma: rng.random_range(0..=1),
        }
    };
    let sets = UncertaintySets { wind: vec![wind], load: UncertaintySets::case_loads(&case, load_budget) };
    (case, sets)
}

/// CCG against enumeration on one tiny instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub seed: u64,
    pub horizon: usize,
    pub units: usize,
    pub buses: usize,
    /// `None` when the instance has no robust-feasible commitment.
    pub ccg: Option<f64>,
    pub enumeration: Option<f64>,
    pub rel_error: f64,
    pub iterations: usize,
    pub matched: bool,
}

/// Solve `tiny_instance(seed)` both ways. Both sides reporting infeasibility
/// counts as a match.
pub fn check_equivalence(seed: u64, tol: f64) -> Result<Equivalence, CcgError> {
    let (case, sets) = tiny_instance(seed);
    let variant = ModelVariant::MODEL1;
    let opts = CcgOptions { epsilon: 1e-4, ..CcgOptions::default() };
    let (ccg, iterations) = match solve_rscuc(&case, &sets, variant, &opts) {
        Ok(s) => (Some(s.objective), s.iterations),
        Err(CcgError::MasterInfeasible) => (None, 0),
        Err(e) => return Err(e),
    };
    let enumeration = match enumerate_rscuc(&case, &sets, variant) {
        Ok(e) => Some(e.objective),
        Err(CcgError::MasterInfeasible) => None,
        Err(e) => return Err(e),
    };
    let rel_error = match (ccg, enumeration) {
        (Some(a), Some(b)) => (a - b).abs() / b.abs().max(1.0),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    Ok(Equivalence {
        seed,
        horizon: case.horizon,
        units: case.units.len(),
        buses: case.buses.len(),
        ccg,
        enumeration,
        rel_error,
        iterations,
        matched: rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_enumeration_matches_unit_commitment() {
        let (case, _) = tiny_instance(3);
        let sets = UncertaintySets::deterministic(&case);
        let sys = build_ruc(&case, &sets, ModelVariant::MODEL1).unwrap();
        let rhs = sys.bind_uncertainty(&case, &Realization::forecast(&case)).unwrap();
        let (req, _) = sys.single_scenario(&rhs, None, None);
        let uc = solve(&req).unwrap();
        match enumerate_rscuc(&case, &sets, ModelVariant::MODEL1) {
            Ok(e) => assert!((e.objective - uc.objective).abs() <= 1e-6 * uc.objective.abs().max(1.0)),
            Err(_) => assert_eq!(uc.status, Status::Infeasible),
        }
    }

    #[test]
    fn load_candidates_respect_budget() {
        let ls = BoxSet::load(&[10.0, 10.0, 10.0], &[1.0, 2.0, 3.0], 2);
        let c = load_candidates(&ls);
        assert_eq!(c.len(), 1 + 3 + 3);
        assert!(c.contains(&vec![10.0, 12.0, 13.0]));
    }

    #[test]
    fn box_vertices_keep_pins() {
        let v = box_vertices(&[0.0, 0.0], &[1.0, 1.0], &[true, false], &[0.5, 0.5]);
        assert_eq!(v, vec![vec![0.5, 0.0], vec![0.5, 1.0]]);
    }

    #[test]
    fn tiny_instances_are_reproducible() {
        assert_eq!(tiny_instance(9).0, tiny_instance(9).0);
    }
}
