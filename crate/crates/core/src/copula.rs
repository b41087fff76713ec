//! Gaussian copula joining actual wind output and its day-ahead forecast,
//! conditioned on a new forecast to draw day-ahead trajectories.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::WindHistory;
use crate::stats::{self, EmpiricalMarginal};

pub const MIN_SAMPLES_PER_HOUR: usize = 30;
const EIG_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CopulaError {
    #[error("hour {hour} has only {n} historical samples, need at least {MIN_SAMPLES_PER_HOUR}")]
    TooFewSamples { hour: usize, n: usize },
    #[error("forecast has {got} values, model horizon is {want}")]
    Dimension { got: usize, want: usize },
    #[error("correlation matrix unusable: {0}")]
    Correlation(String),
    #[error("R_yy is numerically singular (min eigenvalue {0:e}); regularize the correlation or use more history")]
    SingularForecastBlock(f64),
}

/// Marginals per hour: `x` for actual output, `y` for the forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub x: Vec<EmpiricalMarginal>,
    pub y: Vec<EmpiricalMarginal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopulaModel {
    pub horizon: usize,
    pub marginals: Marginals,
    /// 2T×2T correlation, ordered [x_1..x_T, y_1..y_T].
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct CopulaFile {
    horizon: usize,
    marginals_x: Vec<Vec<f64>>,
    marginals_y: Vec<Vec<f64>>,
    /// Row-major.
    r: Vec<f64>,
}

pub fn fit_marginals(history: &WindHistory) -> Result<Marginals, CopulaError> {
    let t_len = history.horizon;
    if history.len() < MIN_SAMPLES_PER_HOUR {
        return Err(CopulaError::TooFewSamples { hour: 1, n: history.len() });
    }
    let x = (0..t_len).map(|t| EmpiricalMarginal::new(&history.actual_column(t))).collect();
    let y = (0..t_len).map(|t| EmpiricalMarginal::new(&history.forecast_column(t))).collect();
    Ok(Marginals { x, y })
}

pub fn fit_copula(history: &WindHistory, marginals: Marginals) -> Result<CopulaModel, CopulaError> {
    let t_len = history.horizon;
    let n = history.len();
    let z = DMatrix::from_fn(n, 2 * t_len, |d, j| {
        let day = &history.days[d];
        if j < t_len {
            stats::phi_inv(marginals.x[j].cdf(day.actual[j]))
        } else {
            let t = j - t_len;
            stats::phi_inv(marginals.y[t].cdf(day.forecast[t]))
        }
    });
    let raw = stats::correlation(&z);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(CopulaError::Correlation("non-finite entries".into()));
    }
    let r = stats::repair_correlation(&raw, EIG_FLOOR);
    if stats::min_eigenvalue(&r) < -1e-6 {
        return Err(CopulaError::Correlation("indefinite after eigenvalue repair".into()));
    }
    Ok(CopulaModel { horizon: t_len, marginals, r })
}

pub fn fit(history: &WindHistory) -> Result<CopulaModel, CopulaError> {
    let m = fit_marginals(history)?;
    fit_copula(history, m)
}

/// Gaussian conditional z_x | z_y from a (2T)×(2T) correlation matrix.
pub fn gaussian_conditional(r: &DMatrix<f64>, z_y: &DVector<f64>) -> Result<ConditionalGaussian, CopulaError> {
    let t_len = r.nrows() / 2;
    let rxx = r.view((0, 0), (t_len, t_len));
    let rxy = r.view((0, t_len), (t_len, t_len));
    let ryy = r.view((t_len, t_len), (t_len, t_len)).into_owned();
    let min_eig = stats::min_eigenvalue(&ryy);
    if min_eig < 1e-10 {
        return Err(CopulaError::SingularForecastBlock(min_eig));
    }
    let ch = ryy.cholesky().ok_or(CopulaError::SingularForecastBlock(min_eig))?;
    let mean = rxy * ch.solve(z_y);
    let k = ch.solve(&rxy.transpose());
    let cov = rxx - rxy * k;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(ConditionalGaussian { mean, cov })
}

impl CopulaModel {
    pub fn condition_on_forecast(&self, forecast: &[f64]) -> Result<ConditionalGaussian, CopulaError> {
        if forecast.len() != self.horizon {
            return Err(CopulaError::Dimension { got: forecast.len(), want: self.horizon });
        }
        let z_y = DVector::from_iterator(
            self.horizon,
            forecast.iter().zip(&self.marginals.y).map(|(&f, m)| stats::phi_inv(m.cdf(f))),
        );
        gaussian_conditional(&self.r, &z_y)
    }

    /// `n` day-ahead trajectories (rows) in MW, clipped to `[0, capacity]`.
    pub fn sample_day_ahead(
        &self,
        forecast: &[f64],
        n: usize,
        seed: u64,
        capacity: f64,
    ) -> Result<DMatrix<f64>, CopulaError> {
        let cond = self.condition_on_forecast(forecast)?;
        Ok(self.sample_conditional(&cond, n, seed, capacity))
    }

    pub fn sample_conditional(&self, cond: &ConditionalGaussian, n: usize, seed: u64, capacity: f64) -> DMatrix<f64> {
        let t_len = self.horizon;
        let l = stats::psd_factor(&cond.cov, EIG_FLOOR);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, t_len);
        let mut eps = DVector::zeros(t_len);
        for s in 0..n {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            let z = &cond.mean + &l * &eps;
            for t in 0..t_len {
                let x = self.marginals.x[t].quantile(stats::phi(z[t]));
                out[(s, t)] = x.clamp(0.0, capacity);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let f = CopulaFile {
            horizon: self.horizon,
            marginals_x: self.marginals.x.iter().map(|m| m.sorted.clone()).collect(),
            marginals_y: self.marginals.y.iter().map(|m| m.sorted.clone()).collect(),
            r: self.r.transpose().iter().copied().collect(),
        };
        serde_json::to_string(&f).expect("copula serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let f: CopulaFile = serde_json::from_str(text)?;
        let p = 2 * f.horizon;
        if f.r.len() != p * p || f.marginals_x.len() != f.horizon || f.marginals_y.len() != f.horizon {
            return Err(serde::de::Error::custom("copula dimensions are inconsistent"));
        }
        Ok(CopulaModel {
            horizon: f.horizon,
            marginals: Marginals {
                x: f.marginals_x.into_iter().map(|sorted| EmpiricalMarginal { sorted }).collect(),
                y: f.marginals_y.into_iter().map(|sorted| EmpiricalMarginal { sorted }).collect(),
            },
            r: DMatrix::from_row_slice(p, p, &f.r),
        })
    }
}
