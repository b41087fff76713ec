use std::ffi::{c_void, CString};
use std::time::Instant;

use highs_sys as ffi;

use super::{Backend, Sense, SolveRequest, SolveResult, SolverError, SolverOptions, Status};

/// Owned HiGHS instance. Not shared between threads; each solve creates its own.
struct Handle(*mut c_void);

// The handle is only ever used from the thread that owns it.
unsafe impl Send for Handle {}

impl Handle {
    fn new() -> Result<Self, SolverError> {
        let ptr = unsafe { ffi::Highs_create() };
        if ptr.is_null() {
            return Err(SolverError::Backend("Highs_create returned null".into()));
        }
        let h = Handle(ptr);
        h.set_bool("output_flag", false)?;
        Ok(h)
    }

    fn check(status: ffi::HighsInt, what: &str) -> Result<(), SolverError> {
        if status == ffi::STATUS_ERROR {
            Err(SolverError::Backend(format!("{what} failed")))
        } else {
            Ok(())
        }
    }

    fn set_bool(&self, key: &str, v: bool) -> Result<(), SolverError> {
        let k = CString::new(key).expect("option key");
        Self::check(unsafe { ffi::Highs_setBoolOptionValue(self.0, k.as_ptr(), v as ffi::HighsInt) }, key)
    }

    fn set_int(&self, key: &str, v: i32) -> Result<(), SolverError> {
        let k = CString::new(key).expect("option key");
        Self::check(unsafe { ffi::Highs_setIntOptionValue(self.0, k.as_ptr(), v) }, key)
    }

    fn set_double(&self, key: &str, v: f64) -> Result<(), SolverError> {
        let k = CString::new(key).expect("option key");
        Self::check(unsafe { ffi::Highs_setDoubleOptionValue(self.0, k.as_ptr(), v) }, key)
    }

    fn set_string(&self, key: &str, v: &str) -> Result<(), SolverError> {
        let k = CString::new(key).expect("option key");
        let val = CString::new(v).expect("option value");
        Self::check(unsafe { ffi::Highs_setStringOptionValue(self.0, k.as_ptr(), val.as_ptr()) }, key)
    }

    fn apply(&self, opts: &SolverOptions, lp_simplex: bool) -> Result<(), SolverError> {
        self.set_double("primal_feasibility_tolerance", opts.feasibility_tol)?;
        self.set_double("dual_feasibility_tolerance", opts.dual_tol)?;
        self.set_double("mip_rel_gap", opts.mip_rel_gap)?;
        if let Some(g) = opts.mip_abs_gap {
            self.set_double("mip_abs_gap", g)?;
        }
        self.set_double("mip_feasibility_tolerance", opts.feasibility_tol)?;
        self.set_int("random_seed", 0)?;
        if let Some(t) = opts.time_limit {
            self.set_double("time_limit", t)?;
        }
        if lp_simplex {
            self.set_string("solver", "simplex")?;
        }
        Ok(())
    }

    fn run(&self) -> Result<ffi::HighsInt, SolverError> {
        Self::check(unsafe { ffi::Highs_run(self.0) }, "Highs_run")?;
        Ok(unsafe { ffi::Highs_getModelStatus(self.0) })
    }

    fn num_rows(&self) -> usize {
        unsafe { ffi::Highs_getNumRow(self.0) as usize }
    }

    fn num_cols(&self) -> usize {
        unsafe { ffi::Highs_getNumCol(self.0) as usize }
    }

    fn solution(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, m) = (self.num_cols(), self.num_rows());
        let mut col_value = vec![0.0; n];
        let mut col_dual = vec![0.0; n];
        let mut row_value = vec![0.0; m];
        let mut row_dual = vec![0.0; m];
        unsafe {
            ffi::Highs_getSolution(
                self.0,
                col_value.as_mut_ptr(),
                col_dual.as_mut_ptr(),
                row_value.as_mut_ptr(),
                row_dual.as_mut_ptr(),
            );
        }
        (col_value, col_dual, row_value, row_dual)
    }

    fn objective(&self) -> f64 {
        unsafe { ffi::Highs_getObjectiveValue(self.0) }
    }

    fn double_info(&self, key: &str) -> Option<f64> {
        let k = CString::new(key).expect("info key");
        let mut v = 0.0;
        let status = unsafe { ffi::Highs_getDoubleInfoValue(self.0, k.as_ptr(), &mut v) };
        (status != ffi::STATUS_ERROR).then_some(v)
    }
}

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { ffi::Highs_destroy(self.0) }
    }
}

fn map_status(code: ffi::HighsInt) -> Result<Status, SolverError> {
    match code {
        ffi::MODEL_STATUS_OPTIMAL | ffi::MODEL_STATUS_MODEL_EMPTY => Ok(Status::Optimal),
        ffi::MODEL_STATUS_INFEASIBLE => Ok(Status::Infeasible),
        ffi::MODEL_STATUS_UNBOUNDED => Ok(Status::Unbounded),
        ffi::MODEL_STATUS_REACHED_TIME_LIMIT
        | ffi::MODEL_STATUS_REACHED_ITERATION_LIMIT
        | ffi::MODEL_STATUS_REACHED_SOLUTION_LIMIT
        | ffi::MODEL_STATUS_REACHED_INTERRUPT
        | ffi::MODEL_STATUS_REACHED_MEMORY_LIMIT
        | ffi::MODEL_STATUS_OBJECTIVE_BOUND
        | ffi::MODEL_STATUS_OBJECTIVE_TARGET => Ok(Status::Limit),
        other => Err(SolverError::Backend(format!("HiGHS model status {other}"))),
    }
}

fn sense_code(sense: Sense) -> ffi::HighsInt {
    match sense {
        Sense::Minimize => 1,
        Sense::Maximize => -1,
    }
}

/// HiGHS already reports duals as `d obj / d rhs` for both senses.
fn dual_factor(_sense: Sense) -> f64 {
    1.0
}

fn pass_model(h: &Handle, req: &SolveRequest) -> Result<(), SolverError> {
    let n = req.num_cols();
    let m = req.rows.len();
    let mut starts = Vec::with_capacity(m);
    let mut index = Vec::new();
    let mut value = Vec::new();
    let mut row_lower = Vec::with_capacity(m);
    let mut row_upper = Vec::with_capacity(m);
    for row in &req.rows {
        starts.push(index.len() as ffi::HighsInt);
        for &(j, a) in &row.coeffs {
            index.push(j as ffi::HighsInt);
            value.push(a);
        }
        row_lower.push(row.lower);
        row_upper.push(row.upper);
    }
    let nnz = index.len() as ffi::HighsInt;
    let status = if req.is_mip() {
        let integrality: Vec<ffi::HighsInt> = req.integer.iter().map(|&b| b as ffi::HighsInt).collect();
        unsafe {
            ffi::Highs_passMip(
                h.0,
                n as ffi::HighsInt,
                m as ffi::HighsInt,
                nnz,
                2,
                sense_code(req.sense),
                req.objective_offset,
                req.objective.as_ptr(),
                req.col_lower.as_ptr(),
                req.col_upper.as_ptr(),
                row_lower.as_ptr(),
                row_upper.as_ptr(),
                starts.as_ptr(),
                index.as_ptr(),
                value.as_ptr(),
                integrality.as_ptr(),
            )
        }
    } else {
        unsafe {
            ffi::Highs_passLp(
                h.0,
                n as ffi::HighsInt,
                m as ffi::HighsInt,
                nnz,
                2,
                sense_code(req.sense),
                req.objective_offset,
                req.objective.as_ptr(),
                req.col_lower.as_ptr(),
                req.col_upper.as_ptr(),
                row_lower.as_ptr(),
                row_upper.as_ptr(),
                starts.as_ptr(),
                index.as_ptr(),
                value.as_ptr(),
            )
        }
    };
    Handle::check(status, "pass model")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveResult, SolverError> {
        req.validate()?;
        let started = Instant::now();
        let h = Handle::new()?;
        let mip = req.is_mip();
        h.apply(&req.options, !mip)?;
        pass_model(&h, req)?;
        let mut code = h.run()?;
        if code == ffi::MODEL_STATUS_UNBOUNDED_OR_INFEASIBLE {
            // presolve cannot tell the two apart; the plain solver can
            h.set_string("presolve", "off")?;
            code = h.run()?;
            if code == ffi::MODEL_STATUS_UNBOUNDED_OR_INFEASIBLE {
                code = ffi::MODEL_STATUS_INFEASIBLE;
            }
        }
        let status = map_status(code)?;
        let (primal, col_dual, row_activity, row_dual) = h.solution();
        let objective = match status {
            Status::Optimal | Status::Limit => h.objective(),
            Status::Infeasible => f64::NAN,
            Status::Unbounded => match req.sense {
                Sense::Minimize => f64::NEG_INFINITY,
                Sense::Maximize => f64::INFINITY,
            },
        };
        let (row_duals, reduced_costs) = if !mip && status == Status::Optimal {
            let f = dual_factor(req.sense);
            (
                Some(row_dual.iter().map(|v| v * f).collect()),
                Some(col_dual.iter().map(|v| v * f).collect()),
            )
        } else {
            (None, None)
        };
        let mip_dual_bound = if mip && status == Status::Optimal { h.double_info("mip_dual_bound") } else { None };
        Ok(SolveResult {
            status,
            primal,
            objective,
            mip_dual_bound,
            row_activity,
            row_duals,
            reduced_costs,
            wall_time: started.elapsed(),
        })
    }
}

/// A persistent LP that accepts rows one at a time and re-solves from the
/// previous basis. Used by cutting-plane loops.
pub struct LpSession {
    handle: Handle,
    sense: Sense,
}

impl LpSession {
    /// Columns given by cost and bounds; the model starts without rows.
    pub fn new(sense: Sense, cost: &[f64], lower: &[f64], upper: &[f64]) -> Result<Self, SolverError> {
        let handle = Handle::new()?;
        let opts = SolverOptions { feasibility_tol: 1e-9, dual_tol: 1e-9, ..SolverOptions::default() };
        handle.apply(&opts, true)?;
        let n = cost.len() as ffi::HighsInt;
        let starts: [ffi::HighsInt; 1] = [0];
        let status = unsafe {
            ffi::Highs_passLp(
                handle.0,
                n,
                0,
                0,
                2,
                sense_code(sense),
                0.0,
                cost.as_ptr(),
                lower.as_ptr(),
                upper.as_ptr(),
                std::ptr::null(),
                std::ptr::null(),
                starts.as_ptr(),
                std::ptr::null(),
                std::ptr::null(),
            )
        };
        Handle::check(status, "pass session model")?;
        Ok(Self { handle, sense })
    }

    pub fn add_row(&mut self, coeffs: &[(usize, f64)], lower: f64, upper: f64) -> Result<(), SolverError> {
        let idx: Vec<ffi::HighsInt> = coeffs.iter().map(|&(j, _)| j as ffi::HighsInt).collect();
        let val: Vec<f64> = coeffs.iter().map(|&(_, a)| a).collect();
        let status = unsafe {
            ffi::Highs_addRow(self.handle.0, lower, upper, idx.len() as ffi::HighsInt, idx.as_ptr(), val.as_ptr())
        };
        Handle::check(status, "add row")
    }

    pub fn set_costs(&mut self, cost: &[f64]) -> Result<(), SolverError> {
        let status = unsafe {
            ffi::Highs_changeColsCostByRange(self.handle.0, 0, cost.len() as ffi::HighsInt - 1, cost.as_ptr())
        };
        Handle::check(status, "change costs")
    }

    pub fn set_col_bounds(&mut self, col: usize, lower: f64, upper: f64) -> Result<(), SolverError> {
        let status =
            unsafe { ffi::Highs_changeColBounds(self.handle.0, col as ffi::HighsInt, lower, upper) };
        Handle::check(status, "change bounds")
    }

    pub fn num_rows(&self) -> usize {
        self.handle.num_rows()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// Returns the status and, when optimal, the primal point and objective.
    pub fn solve(&mut self) -> Result<(Status, Vec<f64>, f64), SolverError> {
        let mut code = self.handle.run()?;
        if code == ffi::MODEL_STATUS_UNBOUNDED_OR_INFEASIBLE {
            self.handle.set_string("presolve", "off")?;
            code = self.handle.run()?;
        }
        let status = map_status(code).unwrap_or(Status::Infeasible);
        let (x, _, _, _) = self.handle.solution();
        Ok((status, x, self.handle.objective()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_adds_rows_incrementally() {
        // max x + y over the box [0,10]^2, then cut x + y <= 4
        let mut s = LpSession::new(Sense::Maximize, &[1.0, 1.0], &[0.0, 0.0], &[10.0, 10.0]).unwrap();
        let (st, _, obj) = s.solve().unwrap();
        assert_eq!(st, Status::Optimal);
        assert!((obj - 20.0).abs() < 1e-9);
        s.add_row(&[(0, 1.0), (1, 1.0)], f64::NEG_INFINITY, 4.0).unwrap();
        let (_, x, obj) = s.solve().unwrap();
        assert!((obj - 4.0).abs() < 1e-9);
        assert!((x[0] + x[1] - 4.0).abs() < 1e-9);
        assert_eq!(s.num_rows(), 1);
    }
}
