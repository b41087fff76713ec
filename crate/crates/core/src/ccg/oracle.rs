//! Linear maximization over the uncertainty sets.
//!
//! Intersection sets are handled by supporting-hyperplane cutting planes on a
//! persistent LP: cuts are valid for the set whatever the objective, so they
//! are kept between calls. When the cut budget runs out the same problem is
//! solved as a second-order cone program.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DVector;

use crate::imeus::{BoxSet, Imeus, ImeusError, WindSet};
use crate::solver::{LpSession, Sense, Status};

pub const CUT_TOL: f64 = 1e-7;
pub const MAX_CUTS_PER_CALL: usize = 500;
/// Session is rebuilt once it holds this many cuts.
const MAX_POOL: usize = 4000;

/// Cutting-plane maximizer over one intersection set, intersected with
/// `[0, capacity]` per hour.
pub struct ImeusOracle<'a> {
    set: &'a Imeus,
    lower: Vec<f64>,
    upper: Vec<f64>,
    centre: Vec<f64>,
    session: LpSession,
    pub tol: f64,
    pub max_cuts: usize,
    /// Total cuts added over the oracle's life.
    pub cuts: usize,
    /// Calls finished by the cone solver.
    pub conic_calls: usize,
    /// Set once the cut loop has stalled; later calls go straight to the cone
    /// solver.
    stalled: bool,
}

impl<'a> ImeusOracle<'a> {
    pub fn new(set: &'a Imeus) -> Result<Self, ImeusError> {
        let (lo, hi) = set.outer_bounds();
        let lower: Vec<f64> = lo.iter().map(|v| v.max(0.0)).collect();
        let upper: Vec<f64> = hi.iter().zip(&lower).map(|(v, l)| v.min(set.capacity).max(*l)).collect();
        let centre = set.stitched_mean();
        let session = Self::fresh(&lower, &upper)?;
        Ok(ImeusOracle { set, lower, upper, centre, session, tol: CUT_TOL, max_cuts: MAX_CUTS_PER_CALL, cuts: 0, conic_calls: 0, stalled: false })
    }

    fn fresh(lower: &[f64], upper: &[f64]) -> Result<LpSession, ImeusError> {
        LpSession::new(Sense::Maximize, &vec![0.0; lower.len()], lower, upper).map_err(|e| ImeusError::Oracle(e.to_string()))
    }

    fn add_cut(&mut self, en: usize, boundary: &DVector<f64>) -> Result<(), ImeusError> {
        let s = &self.set.subsets[en];
        // gradient of the quadratic form at the boundary point
        let d = boundary - &s.mu;
        let g = s.l.transpose() * (&s.l * d);
        let norm = g.norm();
        if norm == 0.0 {
            return Ok(());
        }
        let g = g / norm;
        let rhs = g.dot(boundary);
        let coeffs: Vec<(usize, f64)> = g.iter().enumerate().map(|(k, a)| (s.start + k, *a)).collect();
        self.session.add_row(&coeffs, f64::NEG_INFINITY, rhs).map_err(|e| ImeusError::Oracle(e.to_string()))?;
        self.cuts += 1;
        Ok(())
    }

    /// Maximize `cᵀx` over the set. Returns a point inside every subset and
    /// its objective value.
    pub fn maximize(&mut self, c: &[f64]) -> Result<(Vec<f64>, f64), ImeusError> {
        let t = self.set.horizon;
        if c.len() != t {
            return Err(ImeusError::Dimension { want: t, got: c.len() });
        }
        if c.iter().all(|v| *v == 0.0) {
            return Ok((self.centre.clone(), 0.0));
        }
        if self.stalled {
            return self.conic(c, None);
        }
        if self.session.num_rows() > MAX_POOL {
            self.session = Self::fresh(&self.lower, &self.upper)?;
        }
        // seed with each window's own maximizer
        for en in 0..self.set.subsets.len() {
            let s = &self.set.subsets[en];
            let cw = &c[s.start..s.start + s.dim];
            if cw.iter().any(|v| *v != 0.0) {
                let (p, _) = s.support(cw);
                self.add_cut(en, &p)?;
            }
        }
        self.session.set_costs(c).map_err(|e| ImeusError::Oracle(e.to_string()))?;
        let mut added = 0;
        loop {
            let (status, x, _) = self.session.solve().map_err(|e| ImeusError::Oracle(e.to_string()))?;
            if status != Status::Optimal {
                return Err(ImeusError::Oracle(format!("cut LP ended with status {status:?}")));
            }
            let mut worst: f64 = 0.0;
            let mut violated = Vec::new();
            for (en, s) in self.set.subsets.iter().enumerate() {
                let v = s.cone_norm(&x[s.start..s.start + s.dim]);
                worst = worst.max(v);
                if v > 1.0 + self.tol {
                    violated.push((en, v));
                }
            }
            if violated.is_empty() {
                let x = self.pull_inside(&x);
                let val = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                return Ok((x, val));
            }
            if added + violated.len() > self.max_cuts {
                log::debug!("cut loop stalled at residual {:.3e}; switching to the cone solver", worst - 1.0);
                self.stalled = true;
                return self.conic(c, Some(worst - 1.0));
            }
            for (en, v) in violated {
                let s = &self.set.subsets[en];
                let w = DVector::from_column_slice(&x[s.start..s.start + s.dim]);
                let p = &s.mu + (w - &s.mu) / v;
                self.add_cut(en, &p)?;
                added += 1;
            }
        }
    }

    /// Exact maximization as a cone program: one second-order cone per subset
    /// plus the per-hour bounds.
    fn conic(&mut self, c: &[f64], residual: Option<f64>) -> Result<(Vec<f64>, f64), ImeusError> {
        let t = self.set.horizon;
        let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for k in 0..t {
            ri.push(k);
            ci.push(k);
            vals.push(1.0);
            b.push(self.upper[k]);
        }
        for k in 0..t {
            ri.push(t + k);
            ci.push(k);
            vals.push(-1.0);
            b.push(-self.lower[k]);
        }
        let mut cones = vec![SupportedConeT::NonnegativeConeT(2 * t)];
        for s in &self.set.subsets {
            let row0 = b.len();
            b.push(s.c_a.sqrt());
            let lmu = &s.l * &s.mu;
            for i in 0..s.dim {
                for j in 0..=i {
                    let v = s.l[(i, j)];
                    if v != 0.0 {
                        ri.push(row0 + 1 + i);
                        ci.push(s.start + j);
                        vals.push(-v);
                    }
                }
                b.push(-lmu[i]);
            }
            cones.push(SupportedConeT::SecondOrderConeT(s.dim + 1));
        }
        let a = CscMatrix::new_from_triplets(b.len(), t, ri, ci, vals);
        let p = CscMatrix::zeros((t, t));
        let q: Vec<f64> = c.iter().map(|v| -v).collect();
        let settings = DefaultSettings { verbose: false, tol_gap_abs: 1e-10, tol_gap_rel: 1e-10, tol_feas: 1e-10, ..DefaultSettings::default() };
        let fail = |why: String| {
            let res = residual.map(|r| format!(" (worst residual {r:.3e})")).unwrap_or_default();
            ImeusError::Oracle(format!("cut loop exceeded {} cuts{res}; cone solver: {why}", self.max_cuts))
        };
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| fail(format!("{e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {}
            other => return Err(fail(format!("{other:?}"))),
        }
        self.conic_calls += 1;
        let x = self.pull_inside(&solver.solution.x);
        let val = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        Ok((x, val))
    }

    /// Shrink toward the stitched mean until every subset accepts the point.
    fn pull_inside(&self, x: &[f64]) -> Vec<f64> {
        let v = self.set.max_cone_norm(x);
        if v <= 1.0 {
            return x.to_vec();
        }
        let s = 1.0 / v;
        x.iter().zip(&self.centre).map(|(a, m)| m + s * (a - m)).collect()
    }
}

/// Per-hour extent of an intersection set: `(min, max)` of each coordinate.
pub fn projection_bounds(set: &Imeus) -> Result<(Vec<f64>, Vec<f64>), ImeusError> {
    let mut o = ImeusOracle::new(set)?;
    let t = set.horizon;
    let mut lo = vec![0.0; t];
    let mut hi = vec![0.0; t];
    for k in 0..t {
        let mut c = vec![0.0; t];
        c[k] = 1.0;
        hi[k] = o.maximize(&c)?.1;
        c[k] = -1.0;
        lo[k] = -o.maximize(&c)?.1;
    }
    Ok((lo, hi))
}

/// Chosen point of a wind set: in-set base trajectory and pinned hours.
#[derive(Debug, Clone, PartialEq)]
pub struct WindChoice {
    pub base: Vec<f64>,
    pub pins: Vec<bool>,
    pub realized: Vec<f64>,
    pub value: f64,
}

pub enum WindOracle<'a> {
    Imeus(ImeusOracle<'a>),
    Box(&'a BoxSet),
}

/// Pin patterns are enumerated exactly when there are at most this many.
pub const MAX_PIN_ENUM: usize = 64;

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut r: usize = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

impl<'a> WindOracle<'a> {
    pub fn new(set: &'a WindSet) -> Result<Self, ImeusError> {
        Ok(match set {
            WindSet::Imeus(s) => WindOracle::Imeus(ImeusOracle::new(s)?),
            WindSet::Box { set, .. } => WindOracle::Box(set),
        })
    }

    /// Maximize over the unpinned set.
    fn base_max(&mut self, c: &[f64]) -> Result<(Vec<f64>, f64), ImeusError> {
        match self {
            WindOracle::Imeus(o) => o.maximize(c),
            WindOracle::Box(b) => {
                let x: Vec<f64> = c
                    .iter()
                    .enumerate()
                    .map(|(t, &ct)| if ct > 0.0 { b.upper[t] } else if ct < 0.0 { b.lower[t] } else { 0.5 * (b.lower[t] + b.upper[t]) })
                    .collect();
                let v = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                Ok((x, v))
            }
        }
    }

    fn with_pins(&mut self, c: &[f64], forecast: &[f64], pins: &[bool]) -> Result<WindChoice, ImeusError> {
        let masked: Vec<f64> = c.iter().zip(pins).map(|(v, p)| if *p { 0.0 } else { *v }).collect();
        let (base, _) = self.base_max(&masked)?;
        let realized: Vec<f64> = base.iter().zip(forecast).zip(pins).map(|((b, f), p)| if *p { *f } else { *b }).collect();
        let value = c.iter().zip(&realized).map(|(a, b)| a * b).sum();
        Ok(WindChoice { base, pins: pins.to_vec(), realized, value })
    }

    /// Maximize `cᵀP` over realizations with exactly `gamma` hours pinned to
    /// the forecast.
    pub fn maximize(&mut self, c: &[f64], forecast: &[f64], gamma: usize) -> Result<WindChoice, ImeusError> {
        let t = c.len();
        if gamma == 0 {
            return self.with_pins(c, forecast, &vec![false; t]);
        }
        if gamma >= t {
            return self.with_pins(c, forecast, &vec![true; t]);
        }
        if binomial(t, gamma) <= MAX_PIN_ENUM {
            let mut best: Option<WindChoice> = None;
            for combo in combinations(t, gamma) {
                let mut pins = vec![false; t];
                combo.iter().for_each(|&k| pins[k] = true);
                let ch = self.with_pins(c, forecast, &pins)?;
                if best.as_ref().is_none_or(|b| ch.value > b.value) {
                    best = Some(ch);
                }
            }
            return Ok(best.expect("at least one pattern"));
        }
        // Rank hours by their contribution at the unpinned optimum, pin the
        // least useful ones, then improve by single swaps.
        let free = self.with_pins(c, forecast, &vec![false; t])?;
        let mut order: Vec<usize> = (0..t).collect();
        let gain = |k: usize| c[k] * (free.realized[k] - forecast[k]);
        order.sort_by(|&a, &b| gain(a).total_cmp(&gain(b)));
        let mut pins = vec![false; t];
        order[..gamma].iter().for_each(|&k| pins[k] = true);
        let mut best = self.with_pins(c, forecast, &pins)?;
        for _ in 0..5 {
            let mut improved = false;
            let pinned: Vec<usize> = order.iter().copied().filter(|&k| best.pins[k]).collect();
            let open: Vec<usize> = order.iter().copied().filter(|&k| !best.pins[k]).collect();
            let pin_cands = &pinned[pinned.len().saturating_sub(3)..];
            let open_cands = &open[..open.len().min(3)];
            for &a in pin_cands {
                for &b in open_cands {
                    let mut p = best.pins.clone();
                    p[a] = false;
                    p[b] = true;
                    let ch = self.with_pins(c, forecast, &p)?;
                    if ch.value > best.value + 1e-9 * best.value.abs().max(1.0) {
                        best = ch;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok(best)
    }
}

/// Maximize `Σ c_t·load_t` over an upward-deviation load box with at most
/// `budget` deviating hours. Returns the realized load and active hours.
pub fn maximize_load(c: &[f64], set: &BoxSet) -> (Vec<f64>, Vec<bool>, f64) {
    let t = c.len();
    let dev: Vec<f64> = match &set.deviation {
        Some(d) => d.clone(),
        None => set.upper.iter().zip(&set.lower).map(|(u, l)| u - l).collect(),
    };
    let budget = set.budget.unwrap_or(t);
    let mut gains: Vec<(usize, f64)> = (0..t).map(|k| (k, c[k] * dev[k])).filter(|(_, g)| *g > 0.0).collect();
    gains.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut active = vec![false; t];
    for &(k, _) in gains.iter().take(budget) {
        active[k] = true;
    }
    let load: Vec<f64> = (0..t).map(|k| set.lower[k] + if active[k] { dev[k] } else { 0.0 }).collect();
    let value = c.iter().zip(&load).map(|(a, b)| a * b).sum();
    (load, active, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imeus::EllipsoidSubset;
    use nalgebra::DMatrix;

    fn ellipse(start: usize, mu: &[f64], r: &[f64], c_a: f64) -> EllipsoidSubset {
        let d = mu.len();
        let r = DMatrix::from_row_slice(d, d, r);
        let k = r.clone().cholesky().unwrap().l();
        let l = k.solve_lower_triangular(&DMatrix::identity(d, d)).unwrap();
        EllipsoidSubset { start, dim: d, mu: DVector::from_column_slice(mu), r, c_a, l }
    }

    fn set_of(t: usize, subsets: Vec<EllipsoidSubset>) -> Imeus {
        let od = subsets[0].dim;
        Imeus { horizon: t, od, alpha: 0.9, gamma: 0, forecast: vec![0.0; t], capacity: 1e9, subsets }
    }

    fn shifted(set: Imeus, by: f64) -> Imeus {
        // keep every coordinate positive so the capacity box is inactive
        let mut s = set;
        for e in &mut s.subsets {
            e.mu.iter_mut().for_each(|m| *m += by);
        }
        s
    }

    #[test]
    fn single_ellipsoid_closed_form() {
        let s = shifted(set_of(3, vec![ellipse(0, &[0.0; 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 4.0)]), 10.0);
        let mut o = ImeusOracle::new(&s).unwrap();
        let (x, v) = o.maximize(&[1.0, 0.0, 0.0]).unwrap();
        assert!((v - 12.0).abs() < 1e-5, "{v}");
        assert!((x[0] - 12.0).abs() < 1e-5 && (x[1] - 10.0).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn high_dimensional_coordinate_extent() {
        // AR(1)-like correlation in 16 hours; the cut loop alone stalls here
        let d: usize = 16;
        let r: Vec<f64> = (0..d * d).map(|k| 0.8f64.powi((k / d).abs_diff(k % d) as i32) * 25.0).collect();
        let e = ellipse(0, &vec![0.0; d], &r, 9.0);
        let want = e.half_extent(5);
        let s = shifted(set_of(d, vec![e]), 100.0);
        let mut o = ImeusOracle::new(&s).unwrap();
        let mut c = vec![0.0; d];
        c[5] = 1.0;
        let (x, v) = o.maximize(&c).unwrap();
        assert!((v - 100.0 - want).abs() < 1e-5, "{v} vs {}", 100.0 + want);
        assert!(s.max_cone_norm(&x) <= 1.0 + 1e-9);
    }

    #[test]
    fn zero_objective() {
        let s = shifted(set_of(2, vec![ellipse(0, &[0.0; 2], &[1.0, 0.0, 0.0, 1.0], 1.0)]), 5.0);
        let mut o = ImeusOracle::new(&s).unwrap();
        let (x, v) = o.maximize(&[0.0, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(s.contains(&x).unwrap().inside);
    }

    #[test]
    fn overlapping_ellipses_match_grid() {
        // two ellipses over the same two hours
        let a = ellipse(0, &[0.0, 0.0], &[4.0, 1.0, 1.0, 1.0], 1.0);
        let b = ellipse(0, &[0.5, -0.2], &[1.0, -0.3, -0.3, 2.0], 1.0);
        let s = shifted(Imeus { horizon: 2, od: 2, alpha: 0.9, gamma: 0, forecast: vec![0.0; 2], capacity: 1e9, subsets: vec![a, b] }, 10.0);
        let mut o = ImeusOracle::new(&s).unwrap();
        let dirs = [[1.0, 0.3], [-0.4, 1.0], [0.7, -0.7], [-1.0, -0.2]];
        let n = 2000;
        let (lo, hi) = (7.0, 13.0);
        for c in dirs {
            let (_, v) = o.maximize(&c).unwrap();
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                for j in 0..n {
                    let x = [lo + (hi - lo) * i as f64 / (n - 1) as f64, lo + (hi - lo) * j as f64 / (n - 1) as f64];
                    if s.contains(&x).unwrap().inside {
                        best = best.max(c[0] * x[0] + c[1] * x[1]);
                    }
                }
            }
            assert!((v - best).abs() < 1e-2 && v >= best - 1e-2, "{v} vs grid {best}");
            assert!(v <= best + 4e-3, "{v} vs grid {best}");
        }
    }

    #[test]
    fn intersection_extent_within_single_extents() {
        let a = ellipse(0, &[0.0, 0.0], &[1.0, 0.8, 0.8, 1.0], 2.0);
        let b = ellipse(1, &[0.0, 0.0], &[1.0, 0.8, 0.8, 1.0], 2.0);
        let s = shifted(Imeus { horizon: 3, od: 2, alpha: 0.9, gamma: 0, forecast: vec![0.0; 3], capacity: 1e9, subsets: vec![a, b] }, 10.0);
        let (lo, hi) = projection_bounds(&s).unwrap();
        for t in 0..3 {
            let single = 2.0 * (2.0f64).sqrt();
            assert!(hi[t] - lo[t] <= single + 1e-6);
        }
        // with consistent covariances the middle hour keeps the single extent
        assert!((hi[1] - lo[1] - 2.0 * 2.0f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn full_budget_returns_forecast() {
        let s = shifted(set_of(3, vec![ellipse(0, &[0.0; 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 4.0)]), 10.0);
        let ws = WindSet::Imeus(s);
        let mut o = WindOracle::new(&ws).unwrap();
        let f = [9.0, 10.0, 11.0];
        let ch = o.maximize(&[1.0, -1.0, 2.0], &f, 3).unwrap();
        assert_eq!(ch.realized, f.to_vec());
    }

    #[test]
    fn one_free_hour_matches_enumeration() {
        let t = 5;
        let mut r = DMatrix::identity(t, t);
        for i in 0..t {
            for j in 0..t {
                r[(i, j)] = 0.7f64.powi((i as i32 - j as i32).abs());
            }
        }
        let e = ellipse(0, &vec![0.0; t], r.as_slice(), 3.0);
        let s = shifted(set_of(t, vec![e]), 10.0);
        let ws = WindSet::Imeus(s);
        let mut o = WindOracle::new(&ws).unwrap();
        let f = vec![10.2, 9.5, 10.0, 10.4, 9.9];
        let c = vec![1.0, -2.0, 0.5, 1.5, -0.3];
        let ch = o.maximize(&c, &f, t - 1).unwrap();
        // brute force: each hour free in turn, others at forecast
        let mut best = f64::NEG_INFINITY;
        for k in 0..t {
            let mut ck = vec![0.0; t];
            ck[k] = c[k];
            let (x, _) = o.base_max(&ck).unwrap();
            let v: f64 = (0..t).map(|j| c[j] * if j == k { x[j] } else { f[j] }).sum();
            best = best.max(v);
        }
        assert!((ch.value - best).abs() < 1e-6, "{} vs {}", ch.value, best);
        assert_eq!(ch.pins.iter().filter(|p| !**p).count(), 1);
    }

    #[test]
    fn load_budget_picks_largest_gains() {
        let set = BoxSet::load(&[10.0, 10.0, 10.0], &[1.0, 3.0, 2.0], 2);
        let (load, active, v) = maximize_load(&[1.0, 1.0, 1.0], &set);
        assert_eq!(active, vec![false, true, true]);
        assert_eq!(load, vec![10.0, 13.0, 12.0]);
        assert_eq!(v, 35.0);
        let (_, active, _) = maximize_load(&[-1.0, -1.0, -1.0], &set);
        assert!(active.iter().all(|a| !a));
    }
}
