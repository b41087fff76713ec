//! Backend-neutral LP/MILP interface.
//!
//! Models are described by a [`SolveRequest`] (columns with bounds and
//! integrality, ranged rows, a linear objective) and handed to a [`Backend`].
//! The only backend shipped is HiGHS, linked statically through `highs-sys`.
//!
//! Row duals follow the sensitivity convention regardless of objective sense:
//! `row_duals[r]` is the rate of change of the optimal objective with respect
//! to the active bound of row `r`. For a minimisation with a `>=` row the dual
//! is therefore nonnegative.

mod highs;
pub mod lp_format;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use highs::{HighsBackend, LpSession};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver configuration: {0}")]
    Config(String),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("lp format line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub time_limit: Option<f64>,
    pub mip_rel_gap: f64,
    #[serde(default)]
    pub mip_abs_gap: Option<f64>,
    pub feasibility_tol: f64,
    pub dual_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            mip_rel_gap: 1e-6,
            mip_abs_gap: None,
            feasibility_tol: 1e-7,
            dual_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub col_names: Vec<String>,
    pub col_lower: Vec<f64>,
    pub col_upper: Vec<f64>,
    pub integer: Vec<bool>,
    pub rows: Vec<Row>,
    pub want_duals: bool,
    pub options: SolverOptions,
}

impl SolveRequest {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            objective_offset: 0.0,
            col_names: Vec::new(),
            col_lower: Vec::new(),
            col_upper: Vec::new(),
            integer: Vec::new(),
            rows: Vec::new(),
            want_duals: false,
            options: SolverOptions::default(),
        }
    }

    pub fn num_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn add_col(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.col_names.push(name.into());
        self.col_lower.push(lower);
        self.col_upper.push(upper);
        self.integer.push(false);
        self.objective.len() - 1
    }

    pub fn add_int_col(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        let j = self.add_col(name, cost, lower, upper);
        self.integer[j] = true;
        j
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        lower: f64,
        upper: f64,
    ) -> usize {
        self.rows.push(Row {
            name: name.into(),
            coeffs,
            lower,
            upper,
        });
        self.rows.len() - 1
    }

    pub fn is_mip(&self) -> bool {
        self.integer.iter().any(|&b| b)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.objective.len();
        if self.col_names.len() != n
            || self.col_lower.len() != n
            || self.col_upper.len() != n
            || self.integer.len() != n
        {
            return Err(SolverError::Malformed("column arrays have inconsistent lengths".into()));
        }
        if self.want_duals && self.is_mip() {
            return Err(SolverError::Malformed(
                "duals requested for a model with integer columns".into(),
            ));
        }
        for j in 0..n {
            if self.col_lower[j] > self.col_upper[j] || self.col_lower[j].is_nan() || self.col_upper[j].is_nan() {
                return Err(SolverError::Malformed(format!(
                    "column {} has bounds [{}, {}]",
                    self.col_names[j], self.col_lower[j], self.col_upper[j]
                )));
            }
            if !self.objective[j].is_finite() {
                return Err(SolverError::Malformed(format!("column {} has non-finite cost", self.col_names[j])));
            }
        }
        for row in &self.rows {
            if row.lower > row.upper || row.lower.is_nan() || row.upper.is_nan() {
                return Err(SolverError::Malformed(format!(
                    "row {} has bounds [{}, {}]",
                    row.name, row.lower, row.upper
                )));
            }
            let mut seen = std::collections::HashSet::with_capacity(row.coeffs.len());
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(SolverError::Malformed(format!("row {} references column {j}", row.name)));
                }
                if !seen.insert(j) {
                    return Err(SolverError::Malformed(format!("row {} repeats column {j}", row.name)));
                }
                if !a.is_finite() {
                    return Err(SolverError::Malformed(format!("row {} has a non-finite coefficient", row.name)));
                }
            }
        }
        Ok(())
    }

    /// Row activities `A x` for a primal point.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    /// Largest bound violation of `x` over rows and columns.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, act) in self.rows.iter().zip(self.activities(x)) {
            worst = worst.max(r.lower - act).max(act - r.upper);
        }
        for j in 0..self.num_cols() {
            worst = worst.max(self.col_lower[j] - x[j]).max(x[j] - self.col_upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    Limit,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Best proven bound of a MILP solve.
    pub mip_dual_bound: Option<f64>,
    pub row_activity: Vec<f64>,
    pub row_duals: Option<Vec<f64>>,
    pub reduced_costs: Option<Vec<f64>>,
    pub wall_time: Duration,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Dual objective `sum_r y_r * b_r + sum_j d_j * l_j` evaluated at the bound
    /// each multiplier is attached to. Only meaningful for LP results.
    pub fn dual_objective(&self, req: &SolveRequest) -> Option<f64> {
        let y = self.row_duals.as_ref()?;
        let d = self.reduced_costs.as_ref()?;
        let mut val = req.objective_offset;
        for (r, &yr) in req.rows.iter().zip(y) {
            val += yr * active_bound(yr, r.lower, r.upper, req.sense);
        }
        for j in 0..req.num_cols() {
            val += d[j] * active_bound(d[j], req.col_lower[j], req.col_upper[j], req.sense);
        }
        Some(val)
    }

    /// Max over rows of `|y_r| * slack_r`, the slack measured to the bound the
    /// multiplier is attached to.
    pub fn complementarity_residual(&self, req: &SolveRequest) -> Option<f64> {
        let y = self.row_duals.as_ref()?;
        let mut worst: f64 = 0.0;
        for ((r, &yr), &act) in req.rows.iter().zip(y).zip(&self.row_activity) {
            if yr == 0.0 {
                continue;
            }
            let b = active_bound(yr, r.lower, r.upper, req.sense);
            worst = worst.max((yr * (act - b)).abs());
        }
        Some(worst)
    }
}

/// Bound a multiplier belongs to: for minimisation a positive multiplier
/// pushes on the lower bound, a negative one on the upper bound.
fn active_bound(mult: f64, lower: f64, upper: f64, sense: Sense) -> f64 {
    let on_lower = match sense {
        Sense::Minimize => mult > 0.0,
        Sense::Maximize => mult < 0.0,
    };
    let b = if lower == upper {
        lower
    } else if on_lower {
        lower
    } else {
        upper
    };
    if b.is_finite() {
        b
    } else {
        0.0
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, req: &SolveRequest) -> Result<SolveResult, SolverError>;
}

/// Resolve the `solver.backend` configuration key.
pub fn backend_from_name(name: &str) -> Result<Box<dyn Backend>, SolverError> {
    match name.to_ascii_lowercase().as_str() {
        "highs" | "default" => Ok(Box::new(HighsBackend)),
        other => Err(SolverError::Config(format!(
            "unknown solver backend `{other}` (available: highs)"
        ))),
    }
}

/// Solve with the default backend.
pub fn solve(req: &SolveRequest) -> Result<SolveResult, SolverError> {
    HighsBackend.solve(req)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_x_above_three() {
        let mut req = SolveRequest::new(Sense::Minimize);
        let x = req.add_col("x", 1.0, f64::NEG_INFINITY, f64::INFINITY);
        req.add_row("c", vec![(x, 1.0)], 3.0, f64::INFINITY);
        req.want_duals = true;
        let res = solve(&req).unwrap();
        assert_eq!(res.status, Status::Optimal);
        assert!((res.primal[0] - 3.0).abs() < 1e-9);
        assert!((res.row_duals.as_ref().unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn maximize_duals_use_sensitivity_sign() {
        // max x s.t. x <= 5: d obj / d rhs = +1
        let mut req = SolveRequest::new(Sense::Maximize);
        let x = req.add_col("x", 1.0, 0.0, f64::INFINITY);
        req.add_row("c", vec![(x, 1.0)], f64::NEG_INFINITY, 5.0);
        req.want_duals = true;
        let res = solve(&req).unwrap();
        assert!((res.objective - 5.0).abs() < 1e-9);
        assert!((res.row_duals.as_ref().unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_pair() {
        let mut req = SolveRequest::new(Sense::Minimize);
        let x = req.add_col("x", 0.0, f64::NEG_INFINITY, f64::INFINITY);
        req.add_row("lo", vec![(x, 1.0)], 1.0, f64::INFINITY);
        req.add_row("hi", vec![(x, 1.0)], f64::NEG_INFINITY, 0.0);
        assert_eq!(solve(&req).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut req = SolveRequest::new(Sense::Minimize);
        req.add_col("x", -1.0, 0.0, f64::INFINITY);
        let st = solve(&req).unwrap().status;
        assert_eq!(st, Status::Unbounded);
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let w = [12.0, 2.0, 1.0, 1.0, 4.0];
        let v = [4.0, 2.0, 1.0, 2.0, 10.0];
        let cap = 15.0;
        let mut best = 0.0f64;
        for mask in 0u32..32 {
            let (mut ww, mut vv) = (0.0, 0.0);
            for i in 0..5 {
                if mask >> i & 1 == 1 {
                    ww += w[i];
                    vv += v[i];
                }
            }
            if ww <= cap {
                best = best.max(vv);
            }
        }
        let mut req = SolveRequest::new(Sense::Maximize);
        let cols: Vec<usize> = (0..5).map(|i| req.add_int_col(format!("x{i}"), v[i], 0.0, 1.0)).collect();
        req.add_row("cap", cols.iter().map(|&j| (j, w[j])).collect(), f64::NEG_INFINITY, cap);
        let res = solve(&req).unwrap();
        assert_eq!(res.status, Status::Optimal);
        assert!((res.objective - best).abs() < 1e-9);
    }

    #[test]
    fn duals_rejected_for_mip() {
        let mut req = SolveRequest::new(Sense::Minimize);
        req.add_int_col("b", 1.0, 0.0, 1.0);
        req.want_duals = true;
        assert!(matches!(solve(&req), Err(SolverError::Malformed(_))));
    }

    #[test]
    fn unknown_backend_is_config_error() {
        assert!(matches!(backend_from_name("cplex"), Err(SolverError::Config(_))));
        assert_eq!(backend_from_name("highs").unwrap().name(), "highs");
    }

    #[test]
    fn lp_duality_gap_small() {
        // min 2x + 3y  s.t. x + y >= 4, x - y = 1, 0 <= x <= 10, y >= 0
        let mut req = SolveRequest::new(Sense::Minimize);
        let x = req.add_col("x", 2.0, 0.0, 10.0);
        let y = req.add_col("y", 3.0, 0.0, f64::INFINITY);
        req.add_row("a", vec![(x, 1.0), (y, 1.0)], 4.0, f64::INFINITY);
        req.add_row("b", vec![(x, 1.0), (y, -1.0)], 1.0, 1.0);
        req.want_duals = true;
        let res = solve(&req).unwrap();
        let dual = res.dual_objective(&req).unwrap();
        assert!((dual - res.objective).abs() <= 1e-6 * res.objective.abs().max(1.0));
        assert!(res.complementarity_residual(&req).unwrap() < 1e-9);
        assert!(req.primal_residual(&res.primal) < 1e-7);
    }
}
