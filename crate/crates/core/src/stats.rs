//! Small statistics helpers shared by the copula and set builders.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::LazyLock;

static STD_NORMAL: LazyLock<Normal> = LazyLock::new(|| Normal::standard());

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    STD_NORMAL.cdf(x)
}

/// Standard normal quantile.
pub fn phi_inv(p: f64) -> f64 {
    let x = STD_NORMAL.inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    // one Newton step against the cdf
    let d = STD_NORMAL.pdf(x);
    if d > 1e-300 { x - (STD_NORMAL.cdf(x) - p) / d } else { x }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Nearest-rank quantile: the smallest sample with at least `q·n` samples at
/// or below it. Ties resolve to the larger rank.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    v[rank - 1]
}

/// Empirical CDF with plotting positions rank/(n+1) and linear interpolation
/// between order statistics. Values outside the sample range clamp to the
/// first/last plotting position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMarginal {
    pub sorted: Vec<f64>,
}

impl EmpiricalMarginal {
    pub fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        EmpiricalMarginal { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let v = &self.sorted;
        let n = v.len();
        let np1 = (n + 1) as f64;
        if x <= v[0] {
            // a tie group at the minimum still counts in full
            let k = v.partition_point(|&s| s <= x).max(1);
            return k as f64 / np1;
        }
        if x >= v[n - 1] {
            return n as f64 / np1;
        }
        let k = v.partition_point(|&s| s <= x);
        let (lo, hi) = (v[k - 1], v[k]);
        (k as f64 + (x - lo) / (hi - lo)) / np1
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let v = &self.sorted;
        let n = v.len();
        let r = p * (n + 1) as f64;
        if r <= 1.0 {
            return v[0];
        }
        if r >= n as f64 {
            return v[n - 1];
        }
        let k = r.floor() as usize;
        let frac = r - k as f64;
        v[k - 1] + frac * (v[k] - v[k - 1])
    }
}

/// Sample correlation matrix of the columns of `data` (rows are
/// observations). Constant columns are treated as uncorrelated.
pub fn correlation(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = data.shape();
    let means: Vec<f64> = (0..p).map(|j| data.column(j).sum() / n as f64).collect();
    let mut centred = data.clone();
    for j in 0..p {
        for i in 0..n {
            centred[(i, j)] -= means[j];
        }
    }
    let cov = centred.transpose() * &centred;
    let mut r = DMatrix::<f64>::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let d = (cov[(i, i)] * cov[(j, j)]).sqrt();
            r[(i, j)] = if d > 0.0 { cov[(i, j)] / d } else { 0.0 };
        }
    }
    r
}

/// Clip eigenvalues at `floor` and rescale to unit diagonal. Returns the
/// matrix unchanged when it is already positive definite enough.
pub fn repair_correlation(r: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { 1.0 } else { m[(i, j)] / (d[i] * d[j]) })
}

/// Lower-triangular factor `L` with `L Lᵀ = a`, falling back to a
/// clipped-eigenvalue square root when `a` is only semidefinite.
pub fn psd_factor(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(sym);
    let s = eig.eigenvalues.map(|l| l.max(floor).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((a + a.transpose()) * 0.5).eigenvalues.min()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ecdf_plotting_positions() {
        let m = EmpiricalMarginal::new(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m.cdf(2.0) - 0.4).abs() < 1e-15);
        assert!((m.cdf(-5.0) - 0.2).abs() < 1e-15);
        assert!((m.cdf(9.0) - 0.8).abs() < 1e-15);
        assert!((m.cdf(2.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ecdf_median_quantile() {
        let m = EmpiricalMarginal::new(&[50.0, 10.0, 30.0, 20.0, 40.0]);
        assert_eq!(m.quantile(0.5), 30.0);
    }

    #[test]
    fn nearest_rank_rounds_up() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.9), 9.0);
        assert_eq!(nearest_rank(&v, 0.91), 10.0);
    }

    #[test]
    fn repair_gives_unit_diagonal_psd() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let f = repair_correlation(&r, 1e-8);
        for i in 0..3 {
            assert!((f[(i, i)] - 1.0).abs() < 1e-12);
        }
        assert!(min_eigenvalue(&f) > -1e-12);
    }

    proptest! {
        #[test]
        fn phi_round_trip(p in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert!((phi(phi_inv(p)) - p).abs() < 1e-12);
        }

        #[test]
        fn ecdf_monotone_and_inverse(mut xs in prop::collection::vec(-100.0f64..100.0, 5..60), q in -120.0f64..120.0, dq in 0.0f64..10.0) {
            xs.iter_mut().for_each(|x| *x = (*x * 8.0).round() / 8.0);
            let m = EmpiricalMarginal::new(&xs);
            let (a, b) = (m.cdf(q), m.cdf(q + dq));
            prop_assert!(a <= b + 1e-15);
            prop_assert!(a > 0.0 && b < 1.0);
            let s = &m.sorted;
            if q > s[0] && q < s[s.len() - 1] {
                let back = m.quantile(m.cdf(q));
                let k = s.partition_point(|&v| v <= q);
                let spacing = s[k] - s[k - 1];
                prop_assert!((back - q).abs() <= spacing + 1e-9);
            }
        }
    }
}
