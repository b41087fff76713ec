//! Paired day-ahead forecast / actual wind history, CSV I/O and a synthetic
//! generator with AR(1) errors whose spread grows with the forecast level.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("history csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("history: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindDay {
    pub forecast: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindHistory {
    pub horizon: usize,
    pub days: Vec<WindDay>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    day: usize,
    hour: usize,
    forecast_mw: f64,
    actual_mw: f64,
}

impl WindHistory {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Split into the first `n_train` days and the rest.
    pub fn split(&self, n_train: usize) -> (WindHistory, WindHistory) {
        let n = n_train.min(self.days.len());
        (
            WindHistory { horizon: self.horizon, days: self.days[..n].to_vec() },
            WindHistory { horizon: self.horizon, days: self.days[n..].to_vec() },
        )
    }

    /// Actual values of hour `t` across days.
    pub fn actual_column(&self, t: usize) -> Vec<f64> {
        self.days.iter().map(|d| d.actual[t]).collect()
    }

    pub fn forecast_column(&self, t: usize) -> Vec<f64> {
        self.days.iter().map(|d| d.forecast[t]).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, HistoryError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows: Vec<Record> = Vec::new();
        for r in rdr.deserialize() {
            rows.push(r?);
        }
        if rows.is_empty() {
            return Err(HistoryError::Invalid("no rows".into()));
        }
        let horizon = rows.iter().map(|r| r.hour).max().unwrap();
        if rows.iter().any(|r| r.hour == 0) {
            return Err(HistoryError::Invalid("hours are numbered from 1".into()));
        }
        let mut day_ids: Vec<usize> = rows.iter().map(|r| r.day).collect();
        day_ids.sort_unstable();
        day_ids.dedup();
        let mut days = vec![
            WindDay { forecast: vec![f64::NAN; horizon], actual: vec![f64::NAN; horizon] };
            day_ids.len()
        ];
        for r in &rows {
            let d = day_ids.binary_search(&r.day).unwrap();
            let slot = &mut days[d];
            if !slot.forecast[r.hour - 1].is_nan() {
                return Err(HistoryError::Invalid(format!("day {} hour {} repeated", r.day, r.hour)));
            }
            slot.forecast[r.hour - 1] = r.forecast_mw;
            slot.actual[r.hour - 1] = r.actual_mw;
        }
        for (d, day) in day_ids.iter().zip(&days) {
            if let Some(h) = day.forecast.iter().position(|v| v.is_nan()) {
                return Err(HistoryError::Invalid(format!("day {d} is missing hour {}", h + 1)));
            }
        }
        Ok(WindHistory { horizon, days })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HistoryError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| HistoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(f)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HistoryError> {
        let mut w = csv::Writer::from_writer(writer);
        for (d, day) in self.days.iter().enumerate() {
            for t in 0..self.horizon {
                w.serialize(Record {
                    day: d + 1,
                    hour: t + 1,
                    forecast_mw: day.forecast[t],
                    actual_mw: day.actual[t],
                })?;
            }
        }
        w.flush().map_err(|e| HistoryError::Csv(e.into()))?;
        Ok(())
    }
}

/// Parameters of the synthetic wind history.
///
/// Forecasts follow a lognormal daily level with a diurnal swing and an
/// hourly drift. Actual output regresses toward `level_median`, lags the
/// forecast by `lag_weight` of an hour and carries multiplicative AR(1)
/// errors, so the spread grows with the forecast level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub horizon: usize,
    pub days: usize,
    pub capacity: f64,
    pub level_median: f64,
    /// Log-scale standard deviation of the daily level.
    pub level_spread: f64,
    /// Fraction of the forecast's departure from `level_median` that does not
    /// materialise.
    pub bias: f64,
    pub lag_weight: f64,
    /// Lag-1 correlation of the log errors.
    pub error_rho: f64,
    /// Standard deviation of the log errors.
    pub error_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            horizon: 24,
            days: 300,
            capacity: 400.0,
            level_median: 110.0,
            level_spread: 0.7,
            bias: 0.3,
            lag_weight: 0.5,
            error_rho: half_life_rho(4.0),
            error_sigma: 0.1,
            seed: 7,
        }
    }
}

/// AR(1) coefficient whose autocorrelation halves after `hours`.
pub fn half_life_rho(hours: f64) -> f64 {
    0.5f64.powf(1.0 / hours)
}

pub fn synthetic_history(cfg: &SynthConfig) -> WindHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cap = cfg.capacity;
    let t_len = cfg.horizon;
    let rho = cfg.error_rho;
    let innov = (1.0 - rho * rho).sqrt();
    let sig = cfg.error_sigma;
    let mut days = Vec::with_capacity(cfg.days);
    let mut level = 0.0f64;
    for _ in 0..cfg.days {
        let shock: f64 = rng.sample(StandardNormal);
        level = 0.5 * level + 0.75f64.sqrt() * shock;
        let base = cfg.level_median * (cfg.level_spread * level).exp();
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.random_range(0.05..0.3);
        let mut drift = 0.0;
        let mut forecast = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let s: f64 = rng.sample(StandardNormal);
            drift = 0.8 * drift + 0.12 * s;
            let angle = std::f64::consts::TAU * t as f64 / t_len as f64 + phase;
            let v = base * (amp * angle.sin() + drift).exp();
            forecast.push(v.clamp(1.0, 0.97 * cap));
        }
        let mut eps: f64 = rng.sample(StandardNormal);
        let mut actual = Vec::with_capacity(t_len);
        for t in 0..t_len {
            if t > 0 {
                let s: f64 = rng.sample(StandardNormal);
                eps = rho * eps + innov * s;
            }
            let prev = forecast[t.saturating_sub(1)];
            let lagged = (1.0 - cfg.lag_weight) * forecast[t] + cfg.lag_weight * prev;
            let signal = cfg.level_median + (1.0 - cfg.bias) * (lagged - cfg.level_median);
            actual.push((signal * (sig * eps - 0.5 * sig * sig).exp()).clamp(0.0, cap));
        }
        days.push(WindDay { forecast, actual });
    }
    WindHistory { horizon: t_len, days }
}
