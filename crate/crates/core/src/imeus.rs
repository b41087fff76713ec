//! Uncertainty sets for wind and load: calibrated ellipsoid subsets, their
//! sliding-window intersection (IMEUS), box sets, quality indices and the
//! subset-dimension sweep.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error)]
pub enum ImeusError {
    #[error("need more samples than dimensions (n = {n}, OD = {od})")]
    TooFewSamples { n: usize, od: usize },
    #[error("sample covariance is singular even after ridge regularization")]
    SingularCovariance,
    #[error("dimension mismatch: expected {want}, got {got}")]
    Dimension { want: usize, got: usize },
    #[error("subset dimension {od} outside 1..={t}")]
    BadOd { od: usize, t: usize },
    #[error("wind budget {gamma} outside 0..={t}")]
    BadBudget { gamma: usize, t: usize },
    #[error("no Monte-Carlo sample fell inside the set; increase n_mc")]
    ZeroCount,
    #[error("set oracle: {0}")]
    Oracle(String),
    #[error("set file: {0}")]
    Format(String),
}

/// One calibrated ellipsoid over hours `start..start + dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSubset {
    pub start: usize,
    pub dim: usize,
    pub mu: DVector<f64>,
    pub r: DMatrix<f64>,
    pub c_a: f64,
    /// Lower-triangular with `R⁻¹ = LᵀL`.
    pub l: DMatrix<f64>,
}

impl EllipsoidSubset {
    /// Mahalanobis value `(x−μ)ᵀR⁻¹(x−μ)` of a window slice.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let y = self.whiten(x);
        y.norm_squared()
    }

    /// `L (x − μ)`.
    pub fn whiten(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_iterator(self.dim, x.iter().zip(self.mu.iter()).map(|(a, m)| a - m));
        &self.l * d
    }

    /// Second-order cone form `‖C_a^{-1/2} L (x − μ)‖₂`.
    pub fn cone_norm(&self, x: &[f64]) -> f64 {
        self.whiten(x).norm() / self.c_a.sqrt()
    }

    /// Quadratic form through an explicit inverse, independent of `L`.
    pub fn quad_direct(&self, x: &[f64]) -> f64 {
        let inv = self.r.clone().try_inverse().expect("R is positive definite");
        let d = DVector::from_iterator(self.dim, x.iter().zip(self.mu.iter()).map(|(a, m)| a - m));
        (d.transpose() * inv * &d)[(0, 0)]
    }

    /// Half-width of the ellipsoid along local coordinate `k`.
    pub fn half_extent(&self, k: usize) -> f64 {
        (self.c_a * self.r[(k, k)]).sqrt()
    }

    /// Maximizer of `cᵀx` over this ellipsoid alone.
    pub fn support(&self, c: &[f64]) -> (DVector<f64>, f64) {
        let c = DVector::from_column_slice(c);
        let rc = &self.r * &c;
        let s = c.dot(&rc);
        if s <= 0.0 {
            return (self.mu.clone(), c.dot(&self.mu));
        }
        let x = &self.mu + rc * (self.c_a / s).sqrt();
        let v = c.dot(&x);
        (x, v)
    }
}

pub const RIDGE: f64 = 1e-8;

/// Moment fit on `samples` (rows are observations) with the radius set to
/// the nearest-rank `alpha` quantile of the sample Mahalanobis values.
pub fn fit_ellipsoid(samples: &DMatrix<f64>, alpha: f64, start: usize) -> Result<EllipsoidSubset, ImeusError> {
    let (n, od) = samples.shape();
    if n <= od {
        return Err(ImeusError::TooFewSamples { n, od });
    }
    let mu = DVector::from_iterator(od, (0..od).map(|j| samples.column(j).sum() / n as f64));
    let mut centred = samples.clone();
    for j in 0..od {
        for i in 0..n {
            centred[(i, j)] -= mu[j];
        }
    }
    let mut r = centred.transpose() * &centred / (n as f64 - 1.0);
    let ridge = RIDGE * r.trace() / od as f64;
    for j in 0..od {
        r[(j, j)] += ridge;
    }
    let k = r.clone().cholesky().ok_or(ImeusError::SingularCovariance)?.l();
    let l = k.solve_lower_triangular(&DMatrix::identity(od, od)).ok_or(ImeusError::SingularCovariance)?;
    if !l.iter().all(|v| v.is_finite()) {
        return Err(ImeusError::SingularCovariance);
    }
    let c_vals: Vec<f64> = (0..n)
        .map(|i| (&l * centred.row(i).transpose()).norm_squared())
        .collect();
    let c_a = stats::nearest_rank(&c_vals, alpha);
    if !(c_a > 0.0) {
        return Err(ImeusError::SingularCovariance);
    }
    Ok(EllipsoidSubset { start, dim: od, mu, r, c_a, l })
}

/// Intersection of `T − OD + 1` sliding-window ellipsoids, plus the budget
/// data used when the set enters a robust model.
#[derive(Debug, Clone, PartialEq)]
pub struct Imeus {
    pub horizon: usize,
    pub od: usize,
    pub alpha: f64,
    /// Minimum number of hours pinned to the forecast.
    pub gamma: usize,
    pub forecast: Vec<f64>,
    pub capacity: f64,
    pub subsets: Vec<EllipsoidSubset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub inside: bool,
    pub c_values: Vec<f64>,
    /// Indices of the subsets that reject the trajectory.
    pub violated: Vec<usize>,
}

impl Imeus {
    pub fn fit(samples: &DMatrix<f64>, alpha: f64, od: usize) -> Result<Self, ImeusError> {
        let t = samples.ncols();
        if od < 1 || od > t {
            return Err(ImeusError::BadOd { od, t });
        }
        let subsets = (0..=t - od)
            .map(|en| fit_ellipsoid(&samples.columns(en, od).into_owned(), alpha, en))
            .collect::<Result<Vec<_>, _>>()?;
        let mean: Vec<f64> = (0..t).map(|j| samples.column(j).mean()).collect();
        let cap = samples.max().max(0.0);
        Ok(Imeus { horizon: t, od, alpha, gamma: 0, forecast: mean, capacity: cap, subsets })
    }

    pub fn window<'a>(&self, en: usize, x: &'a [f64]) -> &'a [f64] {
        let s = &self.subsets[en];
        &x[s.start..s.start + s.dim]
    }

    pub fn contains(&self, x: &[f64]) -> Result<Membership, ImeusError> {
        if x.len() != self.horizon {
            return Err(ImeusError::Dimension { want: self.horizon, got: x.len() });
        }
        let c_values: Vec<f64> = self.subsets.iter().map(|s| s.quad(&x[s.start..s.start + s.dim])).collect();
        let violated: Vec<usize> = c_values
            .iter()
            .zip(&self.subsets)
            .enumerate()
            .filter(|(_, (c, s))| **c > s.c_a)
            .map(|(i, _)| i)
            .collect();
        Ok(Membership { inside: violated.is_empty(), c_values, violated })
    }

    /// Largest cone norm over subsets; `≤ 1` means inside.
    pub fn max_cone_norm(&self, x: &[f64]) -> f64 {
        self.subsets
            .iter()
            .map(|s| s.cone_norm(&x[s.start..s.start + s.dim]))
            .fold(0.0, f64::max)
    }

    /// Hours whose covering windows all accept `x`.
    pub fn hours_covered(&self, x: &[f64]) -> Vec<bool> {
        let ok: Vec<bool> = self
            .subsets
            .iter()
            .map(|s| s.quad(&x[s.start..s.start + s.dim]) <= s.c_a)
            .collect();
        (0..self.horizon)
            .map(|t| self.subsets.iter().zip(&ok).filter(|(s, _)| s.start <= t && t < s.start + s.dim).all(|(_, o)| *o))
            .collect()
    }

    /// Window means stitched into a trajectory. Every subset is fitted on the
    /// same samples, so overlapping windows agree on shared hours.
    pub fn stitched_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        let mut cnt = vec![0usize; self.horizon];
        for s in &self.subsets {
            for k in 0..s.dim {
                out[s.start + k] += s.mu[k];
                cnt[s.start + k] += 1;
            }
        }
        out.iter().zip(cnt).map(|(v, c)| v / c as f64).collect()
    }

    /// Outer bounding box from single-window extents.
    pub fn outer_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; self.horizon];
        let mut hi = vec![f64::INFINITY; self.horizon];
        for s in &self.subsets {
            for k in 0..s.dim {
                let e = s.half_extent(k);
                let t = s.start + k;
                lo[t] = lo[t].max(s.mu[k] - e);
                hi[t] = hi[t].min(s.mu[k] + e);
            }
        }
        (lo, hi)
    }

    pub fn with_budget(mut self, forecast: &[f64], capacity: f64, gamma: usize) -> Result<Self, ImeusError> {
        if forecast.len() != self.horizon {
            return Err(ImeusError::Dimension { want: self.horizon, got: forecast.len() });
        }
        if gamma > self.horizon {
            return Err(ImeusError::BadBudget { gamma, t: self.horizon });
        }
        self.forecast = forecast.to_vec();
        self.capacity = capacity;
        self.gamma = gamma;
        Ok(self)
    }
}

/// Build the budgeted wind set from day-ahead samples.
pub fn build_wind_set(
    samples: &DMatrix<f64>,
    forecast: &[f64],
    capacity: f64,
    alpha: f64,
    od: usize,
    gamma: usize,
) -> Result<Imeus, ImeusError> {
    if gamma > samples.ncols() {
        return Err(ImeusError::BadBudget { gamma, t: samples.ncols() });
    }
    Imeus::fit(samples, alpha, od)?.with_budget(forecast, capacity, gamma)
}

/// Per-hour interval set, optionally with a deviation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub deviation: Option<Vec<f64>>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u), "box bounds must satisfy lower <= upper");
        BoxSet { lower, upper, budget: None, deviation: None }
    }

    /// Load set `P_f + B·ΔP` with `Σ B ≤ Γ`.
    pub fn load(forecast: &[f64], deviation: &[f64], gamma: usize) -> Self {
        let upper = forecast.iter().zip(deviation).map(|(f, d)| f + d).collect();
        BoxSet { lower: forecast.to_vec(), upper, budget: Some(gamma), deviation: Some(deviation.to_vec()) }
    }

    /// Per-hour min/max of sampled trajectories.
    pub fn from_samples(samples: &DMatrix<f64>) -> Self {
        let t = samples.ncols();
        let lower = (0..t).map(|j| samples.column(j).min()).collect();
        let upper = (0..t).map(|j| samples.column(j).max()).collect();
        BoxSet::new(lower, upper)
    }

    pub fn horizon(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn log_volume(&self) -> f64 {
        self.widths().iter().map(|w| w.ln()).sum()
    }
}

/// Uncertainty set of one wind farm.
#[derive(Debug, Clone, PartialEq)]
pub enum WindSet {
    Imeus(Imeus),
    /// Interval around the forecast with the same pinning budget semantics.
    Box { set: BoxSet, forecast: Vec<f64>, gamma: usize },
}

impl WindSet {
    /// No deviation from the forecast.
    pub fn fixed(forecast: &[f64]) -> Self {
        WindSet::Box { set: BoxSet::new(forecast.to_vec(), forecast.to_vec()), forecast: forecast.to_vec(), gamma: 0 }
    }

    pub fn forecast(&self) -> &[f64] {
        match self {
            WindSet::Imeus(s) => &s.forecast,
            WindSet::Box { forecast, .. } => forecast,
        }
    }

    pub fn gamma(&self) -> usize {
        match self {
            WindSet::Imeus(s) => s.gamma,
            WindSet::Box { gamma, .. } => *gamma,
        }
    }

    pub fn horizon(&self) -> usize {
        self.forecast().len()
    }

    /// Whether `base` lies in the unpinned set.
    pub fn contains_base(&self, base: &[f64], tol: f64) -> bool {
        match self {
            WindSet::Imeus(s) => {
                s.max_cone_norm(base) <= 1.0 + tol
                    && base.iter().all(|&v| v >= -tol && v <= s.capacity + tol)
            }
            WindSet::Box { set, .. } => base
                .iter()
                .zip(set.lower.iter().zip(&set.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
        }
    }

    /// Realized trajectory for an in-set base point and pin pattern.
    pub fn realize(&self, base: &[f64], pins: &[bool]) -> Vec<f64> {
        base.iter()
            .zip(self.forecast())
            .zip(pins)
            .map(|((b, f), p)| if *p { *f } else { *b })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Quality indices

/// Coverage index: mean over days of the fraction of hours whose covering
/// windows all accept that day's actual trajectory.
pub fn integrity_index(sets: &[Imeus], actuals: &[Vec<f64>]) -> f64 {
    let d = sets.len();
    sets.iter()
        .zip(actuals)
        .map(|(s, a)| s.hours_covered(a).iter().filter(|c| **c).count() as f64 / s.horizon as f64)
        .sum::<f64>()
        / d as f64
}

/// How the in-set sample count of the efficiency index is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMethod {
    /// Plain uniform draws in the box.
    Uniform,
    /// Uniform draws, replaced by an importance-sampling estimate of the
    /// expected count when fewer than `MIN_UNIFORM_HITS` land inside.
    Adaptive,
}

pub const MIN_UNIFORM_HITS: usize = 50;

/// Expected number of `n_box` uniform box draws that fall inside `set`,
/// together with whether importance sampling was used.
pub fn expected_count(set: &Imeus, bbox: &BoxSet, samples: &DMatrix<f64>, n_box: usize, seed: u64, method: CountMethod) -> (f64, bool) {
    let t = set.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; t];
    let mut hits = 0usize;
    for _ in 0..n_box {
        for j in 0..t {
            x[j] = rng.random_range(bbox.lower[j]..=bbox.upper[j]);
        }
        if set.max_cone_norm(&x) <= 1.0 {
            hits += 1;
        }
    }
    if method == CountMethod::Uniform || hits >= MIN_UNIFORM_HITS {
        return (hits as f64, false);
    }
    // Gaussian proposal fitted to the samples, slightly inflated.
    let n = samples.nrows();
    let mean = DVector::from_iterator(t, (0..t).map(|j| samples.column(j).mean()));
    let mut cov = DMatrix::zeros(t, t);
    for i in 0..n {
        let d = samples.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;
    cov *= 1.2f64.powi(2);
    let ridge = RIDGE * cov.trace() / t as f64;
    for j in 0..t {
        cov[(j, j)] += ridge.max(1e-12);
    }
    let chol = stats::psd_factor(&cov, 1e-10);
    let log_det: f64 = (0..t).map(|j| chol[(j, j)].abs().max(1e-300).ln()).sum::<f64>() * 2.0;
    let log_norm = -0.5 * (t as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    let log_vol = bbox.log_volume();
    let mut log_ws = Vec::new();
    let mut z = DVector::zeros(t);
    for _ in 0..n_box {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let y = &mean + &chol * &z;
        let ys = y.as_slice();
        if !bbox.contains(ys) || set.max_cone_norm(ys) > 1.0 {
            continue;
        }
        // q(y) with y = mean + chol·z has log density log_norm − |z|²/2
        log_ws.push(-log_vol - (log_norm - 0.5 * z.norm_squared()));
    }
    if log_ws.is_empty() {
        return (0.0, true);
    }
    let m = log_ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = log_ws.iter().map(|w| (w - m).exp()).sum();
    let log_p = m + s.ln() - (n_box as f64).ln();
    ((log_p.exp() * n_box as f64), true)
}

/// Efficiency index from per-day expected counts; returns `(clamped, raw)`.
pub fn efficiency_from_counts(n_ell: &[f64], n_box: usize) -> Result<(f64, f64), ImeusError> {
    let mean = n_ell.iter().sum::<f64>() / n_ell.len() as f64;
    if !(mean > 0.0) {
        return Err(ImeusError::ZeroCount);
    }
    let raw = 1.0 - mean.log10() / (n_box as f64).log10();
    Ok((raw.clamp(0.0, 1.0), raw))
}

pub fn efficiency_index(
    sets: &[Imeus],
    boxes: &[BoxSet],
    samples: &[DMatrix<f64>],
    n_mc: usize,
    seed: u64,
    method: CountMethod,
) -> Result<(f64, f64), ImeusError> {
    let counts: Vec<f64> = sets
        .par_iter()
        .zip(boxes)
        .zip(samples)
        .enumerate()
        .map(|(d, ((s, b), x))| expected_count(s, b, x, n_mc, seed.wrapping_add(d as u64), method).0)
        .collect();
    efficiency_from_counts(&counts, n_mc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetQuality {
    pub od: usize,
    pub zeta: f64,
    pub eta: f64,
    pub eta_raw: f64,
    pub k: f64,
    pub index: f64,
    pub coverage: f64,
    pub avg_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdSweep {
    pub best_od: usize,
    pub rows: Vec<SetQuality>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub k: f64,
    pub alpha: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub count: CountMethod,
    /// Candidate subset dimensions; defaults to `2..=T`.
    pub ods: Option<Vec<usize>>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { k: 0.3, alpha: 0.9, n_mc: 20_000, seed: 1, count: CountMethod::Adaptive, ods: None }
    }
}

/// Exhaustive subset-dimension sweep over `OD = 2..=T`; ties go to the
/// smaller OD.
pub fn optimize_od(samples: &[DMatrix<f64>], actuals: &[Vec<f64>], opts: &SweepOptions) -> Result<OdSweep, ImeusError> {
    assert!((0.0..=1.0).contains(&opts.k), "k must lie in [0, 1]");
    let t = samples[0].ncols();
    let boxes: Vec<BoxSet> = samples.iter().map(BoxSet::from_samples).collect();
    let ods = opts.ods.clone().unwrap_or_else(|| (2..=t).collect());
    let mut rows = Vec::with_capacity(ods.len());
    for od in ods {
        let sets = samples
            .par_iter()
            .map(|s| Imeus::fit(s, opts.alpha, od))
            .collect::<Result<Vec<_>, _>>()?;
        let zeta = integrity_index(&sets, actuals);
        let (eta, eta_raw) = efficiency_index(&sets, &boxes, samples, opts.n_mc, opts.seed, opts.count)?;
        rows.push(SetQuality {
            od,
            zeta,
            eta,
            eta_raw,
            k: opts.k,
            index: opts.k * zeta + (1.0 - opts.k) * eta,
            coverage: zeta,
            avg_width: None,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.index > rows[best].index {
            best = i;
        }
    }
    Ok(OdSweep { best_od: rows[best].od, rows })
}

pub fn sweep_csv(sweep: &OdSweep) -> String {
    let mut s = String::from("od,zeta,eta,eta_raw,index\n");
    for r in &sweep.rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.od, r.zeta, r.eta, r.eta_raw, r.index));
    }
    s
}

// ---------------------------------------------------------------------------
// Baselines and held-out evaluation

/// Box set adding a symmetric per-hour error interval to the forecast; the
/// half-width is the nearest-rank `alpha` quantile of historical |error|.
pub fn error_box(history_forecast: &[Vec<f64>], history_actual: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    let t = history_forecast[0].len();
    (0..t)
        .map(|j| {
            let errs: Vec<f64> = history_forecast
                .iter()
                .zip(history_actual)
                .map(|(f, a)| (a[j] - f[j]).abs())
                .collect();
            stats::nearest_rank(&errs, alpha)
        })
        .collect()
}

pub fn box_around(forecast: &[f64], half_width: &[f64], capacity: f64) -> BoxSet {
    let lower = forecast.iter().zip(half_width).map(|(f, h)| (f - h).max(0.0)).collect();
    let upper = forecast.iter().zip(half_width).map(|(f, h)| (f + h).min(capacity)).collect();
    BoxSet::new(lower, upper)
}

/// Full-horizon ellipsoid.
pub fn full_ellipsoid(samples: &DMatrix<f64>, alpha: f64) -> Result<Imeus, ImeusError> {
    Imeus::fit(samples, alpha, samples.ncols())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetEvaluation {
    pub coverage: f64,
    pub avg_width: f64,
}

/// Coverage and average per-hour width of box sets on held-out days.
pub fn evaluate_boxes(sets: &[BoxSet], actuals: &[Vec<f64>]) -> SetEvaluation {
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut width = 0.0;
    for (b, a) in sets.iter().zip(actuals) {
        for t in 0..b.horizon() {
            total += 1;
            if b.lower[t] <= a[t] && a[t] <= b.upper[t] {
                inside += 1;
            }
            width += b.upper[t] - b.lower[t];
        }
    }
    SetEvaluation { coverage: inside as f64 / total as f64, avg_width: width / total as f64 }
}

/// Coverage (covering-window rule) and average projection width of
/// intersection sets on held-out days.
pub fn evaluate_imeus(sets: &[Imeus], actuals: &[Vec<f64>]) -> Result<SetEvaluation, ImeusError> {
    let coverage = integrity_index(sets, actuals);
    let widths = sets
        .par_iter()
        .map(|s| {
            let (lo, hi) = crate::ccg::oracle::projection_bounds(s)?;
            Ok(lo.iter().zip(&hi).map(|(l, h)| h - l).sum::<f64>() / s.horizon as f64)
        })
        .collect::<Result<Vec<f64>, ImeusError>>()?;
    Ok(SetEvaluation { coverage, avg_width: stats::mean(&widths) })
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Serialize, Deserialize)]
struct SubsetFile {
    en: usize,
    dim: usize,
    mu: Vec<f64>,
    r: Vec<f64>,
    c_a: f64,
    l: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ImeusFile {
    horizon: usize,
    od: usize,
    alpha: f64,
    gamma: usize,
    forecast: Vec<f64>,
    capacity: f64,
    subsets: Vec<SubsetFile>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl Imeus {
    pub fn to_json(&self) -> String {
        let f = ImeusFile {
            horizon: self.horizon,
            od: self.od,
            alpha: self.alpha,
            gamma: self.gamma,
            forecast: self.forecast.clone(),
            capacity: self.capacity,
            subsets: self
                .subsets
                .iter()
                .map(|s| SubsetFile {
                    en: s.start,
                    dim: s.dim,
                    mu: s.mu.iter().copied().collect(),
                    r: row_major(&s.r),
                    c_a: s.c_a,
                    l: row_major(&s.l),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&f).expect("set serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ImeusError> {
        let f: ImeusFile = serde_json::from_str(text).map_err(|e| ImeusError::Format(e.to_string()))?;
        let mut subsets = Vec::with_capacity(f.subsets.len());
        for s in f.subsets {
            let d = s.dim;
            if s.mu.len() != d || s.r.len() != d * d || s.l.len() != d * d || s.en + d > f.horizon {
                return Err(ImeusError::Format(format!("subset {} has inconsistent dimensions", s.en)));
            }
            subsets.push(EllipsoidSubset {
                start: s.en,
                dim: d,
                mu: DVector::from_vec(s.mu),
                r: DMatrix::from_row_slice(d, d, &s.r),
                c_a: s.c_a,
                l: DMatrix::from_row_slice(d, d, &s.l),
            });
        }
        Ok(Imeus {
            horizon: f.horizon,
            od: f.od,
            alpha: f.alpha,
            gamma: f.gamma,
            forecast: f.forecast,
            capacity: f.capacity,
            subsets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_samples(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn ar1_samples(n: usize, t: usize, rho: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::zeros(n, t);
        for i in 0..n {
            let mut e: f64 = rng.sample(StandardNormal);
            for j in 0..t {
                if j > 0 {
                    let s: f64 = rng.sample(StandardNormal);
                    e = rho * e + (1.0 - rho * rho).sqrt() * s;
                }
                m[(i, j)] = 100.0 + 20.0 * e;
            }
        }
        m
    }

    #[test]
    fn identical_samples_are_singular() {
        let s = DMatrix::from_element(20, 3, 5.0);
        assert!(matches!(fit_ellipsoid(&s, 0.9, 0), Err(ImeusError::SingularCovariance)));
    }

    #[test]
    fn centre_is_inside() {
        let e = fit_ellipsoid(&gaussian_samples(200, 3, 1), 0.9, 0).unwrap();
        let mu: Vec<f64> = e.mu.iter().copied().collect();
        assert_eq!(e.quad(&mu), 0.0);
    }

    #[test]
    fn two_d_radius_matches_chi_square() {
        // χ²(2) 0.9 quantile = −2 ln 0.1
        let e = fit_ellipsoid(&gaussian_samples(50_000, 2, 3), 0.9, 0).unwrap();
        assert!((e.c_a - 4.605).abs() < 0.15, "{}", e.c_a);
    }

    #[test]
    fn l_inverts_r() {
        let e = fit_ellipsoid(&ar1_samples(500, 5, 0.8, 2), 0.9, 0).unwrap();
        let prod = e.l.transpose() * &e.l * &e.r;
        assert!((prod - DMatrix::<f64>::identity(5, 5)).abs().max() < 1e-8);
    }

    #[test]
    fn stitched_mean_is_inside_with_zero_values() {
        let set = Imeus::fit(&ar1_samples(400, 8, 0.8, 4), 0.9, 3).unwrap();
        let m = set.contains(&set.stitched_mean()).unwrap();
        assert!(m.inside);
        assert!(m.c_values.iter().all(|&c| c < 1e-20));
    }

    #[test]
    fn single_violated_subset_is_reported() {
        let set = Imeus::fit(&ar1_samples(400, 6, 0.8, 5), 0.9, 6).unwrap();
        let mut x = set.stitched_mean();
        x[2] += 10.0 * set.subsets[0].half_extent(2);
        let m = set.contains(&x).unwrap();
        assert!(!m.inside);
        assert_eq!(m.violated, vec![0]);

        let set = Imeus::fit(&ar1_samples(400, 6, 0.8, 5), 0.9, 2).unwrap();
        let mut x = set.stitched_mean();
        // alternating pattern pushes only the window it touches
        x[0] += 3.0 * set.subsets[0].half_extent(0);
        let m = set.contains(&x).unwrap();
        assert_eq!(m.violated, vec![0]);
    }

    #[test]
    fn quadratic_and_cone_forms_agree() {
        let set = Imeus::fit(&ar1_samples(400, 8, 0.8, 6), 0.9, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(40.0..160.0)).collect();
            for s in &set.subsets {
                let w = &x[s.start..s.start + s.dim];
                let q = s.quad_direct(w);
                let c = s.cone_norm(w);
                assert!((q.sqrt() / s.c_a.sqrt() - c).abs() <= 1e-9 * c.max(1.0));
                assert_eq!(q <= s.c_a, c <= 1.0 || (q - s.c_a).abs() < 1e-9 * s.c_a);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let set = Imeus::fit(&ar1_samples(100, 4, 0.5, 1), 0.9, 2).unwrap();
        assert!(matches!(set.contains(&[1.0, 2.0]), Err(ImeusError::Dimension { .. })));
    }

    #[test]
    fn integrity_extremes() {
        let s = ar1_samples(300, 6, 0.8, 9);
        let set = Imeus::fit(&s, 0.9, 3).unwrap();
        let inside = vec![set.stitched_mean(); 3];
        assert_eq!(integrity_index(&vec![set.clone(); 3], &inside), 1.0);
        let outside = vec![vec![1e6; 6]; 3];
        assert_eq!(integrity_index(&vec![set; 3], &outside), 0.0);
    }

    #[test]
    fn efficiency_arithmetic() {
        let (eta, raw) = efficiency_from_counts(&[100.0, 100.0], 10_000).unwrap();
        assert!((eta - 0.5).abs() < 1e-15 && (raw - 0.5).abs() < 1e-15);
        assert!(matches!(efficiency_from_counts(&[0.0], 100), Err(ImeusError::ZeroCount)));
    }

    #[test]
    fn set_covering_box_has_zero_efficiency() {
        let s = gaussian_samples(500, 2, 10);
        let mut set = Imeus::fit(&s, 0.9, 2).unwrap();
        set.subsets[0].c_a = 1e6;
        let b = BoxSet::from_samples(&s);
        let (eta, _) = efficiency_index(&[set], &[b], &[s], 5000, 3, CountMethod::Uniform).unwrap();
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn efficiency_decreases_with_radius() {
        let s = ar1_samples(500, 3, 0.6, 11);
        let b = BoxSet::from_samples(&s);
        let base = Imeus::fit(&s, 0.9, 3).unwrap();
        let etas: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|f| {
                let mut set = base.clone();
                set.subsets[0].c_a *= f;
                efficiency_index(&[set], &[b.clone()], &[s.clone()], 20_000, 4, CountMethod::Uniform).unwrap().1
            })
            .collect();
        assert!(etas[0] > etas[1] && etas[1] > etas[2], "{etas:?}");
    }

    #[test]
    fn importance_estimate_matches_uniform_when_both_work() {
        let s = ar1_samples(1000, 4, 0.7, 12);
        let b = BoxSet::from_samples(&s);
        let set = Imeus::fit(&s, 0.9, 2).unwrap();
        let (u, _) = expected_count(&set, &b, &s, 200_000, 5, CountMethod::Uniform);
        let (is_count, used_is) = expected_count_is_only(&set, &b, &s, 200_000, 6);
        assert!(used_is);
        assert!((is_count / u - 1.0).abs() < 0.1, "{is_count} vs {u}");
    }

    fn expected_count_is_only(set: &Imeus, b: &BoxSet, s: &DMatrix<f64>, n: usize, seed: u64) -> (f64, bool) {
        // a box so large that uniform hits vanish, then rescale the count
        let grow = 1e3;
        let big = BoxSet::new(
            b.lower.iter().zip(&b.upper).map(|(l, u)| l - grow * (u - l)).collect(),
            b.upper.iter().zip(&b.lower).map(|(u, l)| u + grow * (u - l)).collect(),
        );
        let (c, used) = expected_count(set, &big, s, n, seed, CountMethod::Adaptive);
        let ratio = (big.log_volume() - b.log_volume()).exp();
        (c * ratio, used)
    }

    #[test]
    fn k_one_picks_best_integrity() {
        let days: Vec<DMatrix<f64>> = (0..4).map(|d| ar1_samples(300, 5, 0.8, 20 + d)).collect();
        let actual: Vec<Vec<f64>> = (0..4).map(|d| ar1_samples(1, 5, 0.8, 40 + d).row(0).iter().copied().collect()).collect();
        let sweep = optimize_od(&days, &actual, &SweepOptions { k: 1.0, n_mc: 2000, ..Default::default() }).unwrap();
        assert_eq!(sweep.rows.len(), 4);
        let best = sweep.rows.iter().map(|r| r.zeta).fold(f64::NEG_INFINITY, f64::max);
        let first = sweep.rows.iter().find(|r| r.zeta == best).unwrap().od;
        assert_eq!(sweep.best_od, first);
        for r in &sweep.rows {
            assert!((r.index - (r.k * r.zeta + (1.0 - r.k) * r.eta)).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_range_checked() {
        let s = ar1_samples(100, 4, 0.5, 1);
        let f = vec![100.0; 4];
        assert!(matches!(build_wind_set(&s, &f, 400.0, 0.9, 2, 5), Err(ImeusError::BadBudget { .. })));
        assert!(build_wind_set(&s, &f, 400.0, 0.9, 2, 4).is_ok());
    }

    #[test]
    fn method_two_is_single_window() {
        let s = ar1_samples(200, 6, 0.8, 3);
        let full = full_ellipsoid(&s, 0.9).unwrap();
        assert_eq!(full.subsets.len(), 1);
        assert_eq!(full, Imeus::fit(&s, 0.9, 6).unwrap());
    }

    #[test]
    fn error_box_width_is_twice_quantile() {
        let f = vec![vec![10.0, 10.0]; 10];
        let a: Vec<Vec<f64>> = (0..10).map(|i| vec![10.0 + i as f64, 10.0 - i as f64]).collect();
        let h = error_box(&f, &a, 0.9);
        assert_eq!(h, vec![8.0, 8.0]);
        let b = box_around(&[100.0, 100.0], &h, 400.0);
        assert_eq!(b.widths(), vec![16.0, 16.0]);
        let ev = evaluate_boxes(&[b], &[vec![100.0, 120.0]]);
        assert_eq!(ev.avg_width, 16.0);
        assert_eq!(ev.coverage, 0.5);
    }

    #[test]
    fn json_round_trip() {
        let set = build_wind_set(&ar1_samples(200, 6, 0.8, 3), &[90.0; 6], 400.0, 0.9, 3, 1).unwrap();
        let back = Imeus::from_json(&set.to_json()).unwrap();
        assert_eq!(set, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn larger_radius_keeps_members(seed in 0u64..1000, grow in 1.0f64..3.0) {
            let s = ar1_samples(100, 5, 0.7, seed);
            let small = Imeus::fit(&s, 0.9, 3).unwrap();
            let mut big = small.clone();
            big.subsets.iter_mut().for_each(|e| e.c_a *= grow);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let x: Vec<f64> = (0..5).map(|_| rng.random_range(50.0..150.0)).collect();
                if small.contains(&x).unwrap().inside {
                    prop_assert!(big.contains(&x).unwrap().inside);
                }
                // intersection membership implies membership of every subset
                if small.contains(&x).unwrap().inside {
                    for e in &small.subsets {
                        prop_assert!(e.quad(&x[e.start..e.start + e.dim]) <= e.c_a);
                    }
                }
            }
        }
    }
}
