//! Physical market case: network, thermal units, wind farms and loads over a
//! day-ahead horizon, plus DC network sensitivities.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case file does not match the schema: {0}")]
    Parse(String),
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("cannot compute shift factors: {0}")]
    Network(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub name: String,
    pub from_bus: usize,
    pub to_bus: usize,
    pub reactance: Option<f64>,
    /// Thermal limit F_l in MW.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialStatus {
    pub on: bool,
    /// Hours already spent in the current on/off state before hour 1.
    pub hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: usize,
    pub name: String,
    pub bus: usize,
    /// Slope of the linear energy offer, $/MWh.
    pub cost_energy: f64,
    pub cost_startup: f64,
    pub cost_shutdown: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub startup_ramp: f64,
    pub shutdown_ramp: f64,
    pub min_up: u32,
    pub min_down: u32,
    pub initial_status: InitialStatus,
    pub initial_output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFarm {
    pub id: usize,
    pub name: String,
    pub bus: usize,
    pub capacity: f64,
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: usize,
    pub name: String,
    pub bus: usize,
    pub forecast: Vec<f64>,
    pub max_deviation: Vec<f64>,
}

/// Immutable after construction; share freely between solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCase {
    pub horizon: usize,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub units: Vec<Unit>,
    pub wind_farms: Vec<WindFarm>,
    pub loads: Vec<Load>,
    /// Line × bus generation shift factors.
    pub gsf: Vec<Vec<f64>>,
    pub slack_bus: usize,
}

// ---------------------------------------------------------------------------
// On-disk schema. Buses are referenced by name.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusFile {
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineFile {
    #[serde(default)]
    name: Option<String>,
    from: String,
    to: String,
    #[serde(default)]
    reactance: Option<f64>,
    capacity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitFile {
    name: String,
    bus: String,
    cost_energy: f64,
    cost_startup: f64,
    cost_shutdown: f64,
    p_min: f64,
    p_max: f64,
    ramp_up: f64,
    ramp_down: f64,
    startup_ramp: f64,
    shutdown_ramp: f64,
    min_up: u32,
    min_down: u32,
    initial_status: InitialStatus,
    initial_output: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindFile {
    name: String,
    bus: String,
    capacity: f64,
    forecast: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadFile {
    name: String,
    bus: String,
    forecast: Vec<f64>,
    max_deviation: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    horizon: usize,
    buses: Vec<BusFile>,
    lines: Vec<LineFile>,
    units: Vec<UnitFile>,
    #[serde(default)]
    wind_farms: Vec<WindFile>,
    #[serde(default)]
    loads: Vec<LoadFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gsf: Option<Vec<Vec<f64>>>,
    slack_bus: String,
}

const PJM5_JSON: &str = include_str!("../data/pjm5.json");

pub fn load_case(path: impl AsRef<Path>) -> Result<MarketCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    MarketCase::from_json(&text)
}

/// The bundled PJM 5-bus case (units A, C, D, E per the combined-unit
/// variant; load and wind profiles are synthetic).
pub fn pjm5() -> MarketCase {
    MarketCase::from_json(PJM5_JSON).expect("bundled case is valid")
}

pub fn pjm5_json() -> &'static str {
    PJM5_JSON
}

impl MarketCase {
    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let file: CaseFile = serde_json::from_str(text).map_err(|e| CaseError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(f: CaseFile) -> Result<Self, CaseError> {
        let mut names = HashMap::new();
        for (i, b) in f.buses.iter().enumerate() {
            if names.insert(b.name.clone(), i).is_some() {
                return Err(CaseError::Validation(format!("duplicate bus name `{}`", b.name)));
            }
        }
        let bus = |name: &str, what: &str| {
            names
                .get(name)
                .copied()
                .ok_or_else(|| CaseError::Validation(format!("{what} references unknown bus `{name}`")))
        };
        let buses = f
            .buses
            .iter()
            .enumerate()
            .map(|(id, b)| Bus { id, name: b.name.clone() })
            .collect();
        let mut lines = Vec::with_capacity(f.lines.len());
        for (id, l) in f.lines.iter().enumerate() {
            let name = l.name.clone().unwrap_or_else(|| format!("{}-{}", l.from, l.to));
            lines.push(Line {
                id,
                from_bus: bus(&l.from, &format!("line {name}"))?,
                to_bus: bus(&l.to, &format!("line {name}"))?,
                name,
                reactance: l.reactance,
                capacity: l.capacity,
            });
        }
        let mut units = Vec::with_capacity(f.units.len());
        for (id, u) in f.units.iter().enumerate() {
            units.push(Unit {
                id,
                name: u.name.clone(),
                bus: bus(&u.bus, &format!("unit {}", u.name))?,
                cost_energy: u.cost_energy,
                cost_startup: u.cost_startup,
                cost_shutdown: u.cost_shutdown,
                p_min: u.p_min,
                p_max: u.p_max,
                ramp_up: u.ramp_up,
                ramp_down: u.ramp_down,
                startup_ramp: u.startup_ramp,
                shutdown_ramp: u.shutdown_ramp,
                min_up: u.min_up,
                min_down: u.min_down,
                initial_status: u.initial_status,
                initial_output: u.initial_output,
            });
        }
        let mut wind_farms = Vec::with_capacity(f.wind_farms.len());
        for (id, w) in f.wind_farms.iter().enumerate() {
            wind_farms.push(WindFarm {
                id,
                name: w.name.clone(),
                bus: bus(&w.bus, &format!("wind farm {}", w.name))?,
                capacity: w.capacity,
                forecast: w.forecast.clone(),
            });
        }
        let mut loads = Vec::with_capacity(f.loads.len());
        for (id, l) in f.loads.iter().enumerate() {
            loads.push(Load {
                id,
                name: l.name.clone(),
                bus: bus(&l.bus, &format!("load {}", l.name))?,
                forecast: l.forecast.clone(),
                max_deviation: l.max_deviation.clone(),
            });
        }
        let slack_bus = bus(&f.slack_bus, "slack_bus")?;
        let mut case = MarketCase {
            horizon: f.horizon,
            buses,
            lines,
            units,
            wind_farms,
            loads,
            gsf: Vec::new(),
            slack_bus,
        };
        case.validate_components()?;
        case.gsf = match f.gsf {
            Some(g) => g,
            None => case.compute_gsf()?,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        let bn = |b: usize| self.buses[b].name.clone();
        let file = CaseFile {
            horizon: self.horizon,
            buses: self.buses.iter().map(|b| BusFile { name: b.name.clone() }).collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineFile {
                    name: Some(l.name.clone()),
                    from: bn(l.from_bus),
                    to: bn(l.to_bus),
                    reactance: l.reactance,
                    capacity: l.capacity,
                })
                .collect(),
            units: self
                .units
                .iter()
                .map(|u| UnitFile {
                    name: u.name.clone(),
                    bus: bn(u.bus),
                    cost_energy: u.cost_energy,
                    cost_startup: u.cost_startup,
                    cost_shutdown: u.cost_shutdown,
                    p_min: u.p_min,
                    p_max: u.p_max,
                    ramp_up: u.ramp_up,
                    ramp_down: u.ramp_down,
                    startup_ramp: u.startup_ramp,
                    shutdown_ramp: u.shutdown_ramp,
                    min_up: u.min_up,
                    min_down: u.min_down,
                    initial_status: u.initial_status,
                    initial_output: u.initial_output,
                })
                .collect(),
            wind_farms: self
                .wind_farms
                .iter()
                .map(|w| WindFile {
                    name: w.name.clone(),
                    bus: bn(w.bus),
                    capacity: w.capacity,
                    forecast: w.forecast.clone(),
                })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|l| LoadFile {
                    name: l.name.clone(),
                    bus: bn(l.bus),
                    forecast: l.forecast.clone(),
                    max_deviation: l.max_deviation.clone(),
                })
                .collect(),
            gsf: Some(self.gsf.clone()),
            slack_bus: bn(self.slack_bus),
        };
        serde_json::to_string_pretty(&file).expect("case serialises")
    }

    fn validate_components(&self) -> Result<(), CaseError> {
        let t = self.horizon;
        let bad = |msg: String| Err(CaseError::Validation(msg));
        if t == 0 {
            return bad("horizon must be at least one hour".into());
        }
        if self.buses.is_empty() {
            return bad("case has no buses".into());
        }
        let nb = self.buses.len();
        for l in &self.lines {
            if !(l.capacity > 0.0) {
                return bad(format!("line {} capacity must be positive, got {}", l.name, l.capacity));
            }
            if l.from_bus == l.to_bus {
                return bad(format!("line {} connects bus {} to itself", l.name, self.buses[l.from_bus].name));
            }
            if let Some(x) = l.reactance {
                if !(x > 0.0) {
                    return bad(format!("line {} reactance must be positive, got {x}", l.name));
                }
            }
            if l.from_bus >= nb || l.to_bus >= nb {
                return bad(format!("line {} references a missing bus", l.name));
            }
        }
        for u in &self.units {
            if u.bus >= nb {
                return bad(format!("unit {} references a missing bus", u.name));
            }
            if !(0.0 <= u.p_min && u.p_min <= u.p_max) {
                return bad(format!("unit {}: need 0 <= p_min <= p_max", u.name));
            }
            for (what, r) in [
                ("ramp_up", u.ramp_up),
                ("ramp_down", u.ramp_down),
                ("startup_ramp", u.startup_ramp),
                ("shutdown_ramp", u.shutdown_ramp),
            ] {
                if !(r > 0.0) {
                    return bad(format!("unit {}: {what} must be positive", u.name));
                }
            }
            if u.min_up < 1 || u.min_down < 1 {
                return bad(format!("unit {}: min_up and min_down must be at least 1", u.name));
            }
            if u.cost_energy < 0.0 || u.cost_startup < 0.0 || u.cost_shutdown < 0.0 {
                return bad(format!("unit {}: costs must be nonnegative", u.name));
            }
            if u.initial_status.on && !(u.p_min <= u.initial_output && u.initial_output <= u.p_max) {
                return bad(format!("unit {}: initial output outside [p_min, p_max]", u.name));
            }
            if !u.initial_status.on && u.initial_output != 0.0 {
                return bad(format!("unit {}: offline unit must have zero initial output", u.name));
            }
        }
        for w in &self.wind_farms {
            if w.bus >= nb {
                return bad(format!("wind farm {} references a missing bus", w.name));
            }
            if w.forecast.len() != t {
                return bad(format!("wind farm {}: forecast has {} values, horizon is {t}", w.name, w.forecast.len()));
            }
            if w.forecast.iter().any(|&f| !(0.0 <= f && f <= w.capacity)) {
                return bad(format!("wind farm {}: forecast outside [0, capacity]", w.name));
            }
        }
        for l in &self.loads {
            if l.bus >= nb {
                return bad(format!("load {} references a missing bus", l.name));
            }
            if l.forecast.len() != t || l.max_deviation.len() != t {
                return bad(format!("load {}: profiles must have {t} values", l.name));
            }
            if l.forecast.iter().chain(&l.max_deviation).any(|&v| !(v >= 0.0)) {
                return bad(format!("load {}: forecast and max_deviation must be nonnegative", l.name));
            }
        }
        if self.slack_bus >= nb {
            return bad("slack bus out of range".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        self.validate_components()?;
        if self.gsf.len() != self.lines.len() || self.gsf.iter().any(|r| r.len() != self.buses.len()) {
            return Err(CaseError::Validation(format!(
                "gsf must be {} x {}",
                self.lines.len(),
                self.buses.len()
            )));
        }
        Ok(())
    }

    /// DC power-transfer distribution factors from line reactances. The slack
    /// column is zero.
    pub fn compute_gsf(&self) -> Result<Vec<Vec<f64>>, CaseError> {
        let nb = self.buses.len();
        for l in &self.lines {
            if l.reactance.is_none() {
                return Err(CaseError::Network(format!("line {} has no reactance", l.name)));
            }
        }
        // connectivity
        let mut adj = vec![Vec::new(); nb];
        for l in &self.lines {
            adj[l.from_bus].push(l.to_bus);
            adj[l.to_bus].push(l.from_bus);
        }
        let mut seen = vec![false; nb];
        let mut queue = VecDeque::from([self.slack_bus]);
        seen[self.slack_bus] = true;
        while let Some(b) = queue.pop_front() {
            for &n in &adj[b] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(CaseError::Network(format!(
                "bus {} is not connected to the slack bus",
                self.buses[b].name
            )));
        }
        if nb == 1 {
            return Ok(vec![vec![0.0]; self.lines.len()]);
        }
        // reduced susceptance matrix (slack row/column removed)
        let reduced: Vec<usize> = (0..nb).filter(|&b| b != self.slack_bus).collect();
        let pos = |b: usize| reduced.iter().position(|&r| r == b);
        let mut bmat = DMatrix::<f64>::zeros(nb - 1, nb - 1);
        for l in &self.lines {
            let y = 1.0 / l.reactance.unwrap();
            let (f, t) = (pos(l.from_bus), pos(l.to_bus));
            if let Some(i) = f {
                bmat[(i, i)] += y;
            }
            if let Some(j) = t {
                bmat[(j, j)] += y;
            }
            if let (Some(i), Some(j)) = (f, t) {
                bmat[(i, j)] -= y;
                bmat[(j, i)] -= y;
            }
        }
        let x = bmat
            .cholesky()
            .ok_or_else(|| CaseError::Network("susceptance matrix is singular".into()))?
            .inverse();
        let theta = |bus: usize, inj: usize| match (pos(bus), pos(inj)) {
            (Some(i), Some(j)) => x[(i, j)],
            _ => 0.0,
        };
        Ok(self
            .lines
            .iter()
            .map(|l| {
                let y = 1.0 / l.reactance.unwrap();
                (0..nb).map(|m| y * (theta(l.from_bus, m) - theta(l.to_bus, m))).collect()
            })
            .collect())
    }

    /// Net bus injections for one hour from per-unit dispatch, per-farm wind
    /// and per-load demand. Passing deviations instead yields the incremental
    /// injections of the redispatch stage.
    pub fn net_injection(&self, unit_mw: &[f64], wind_mw: &[f64], load_mw: &[f64]) -> Vec<f64> {
        let mut inj = vec![0.0; self.buses.len()];
        for (u, p) in self.units.iter().zip(unit_mw) {
            inj[u.bus] += p;
        }
        for (w, p) in self.wind_farms.iter().zip(wind_mw) {
            inj[w.bus] += p;
        }
        for (l, p) in self.loads.iter().zip(load_mw) {
            inj[l.bus] -= p;
        }
        inj
    }

    pub fn line_flows(&self, injection: &[f64]) -> Vec<f64> {
        self.gsf
            .iter()
            .map(|row| row.iter().zip(injection).map(|(g, p)| g * p).sum())
            .collect()
    }

    pub fn total_load_forecast(&self, t: usize) -> f64 {
        self.loads.iter().map(|l| l.forecast[t]).sum()
    }

    pub fn total_wind_forecast(&self, t: usize) -> f64 {
        self.wind_farms.iter().map(|w| w.forecast[t]).sum()
    }

    pub fn unit_index(&self, name: &str) -> Option<usize> {
        self.units.iter().position(|u| u.name == name)
    }

    /// A copy with load deviations zeroed: no load uncertainty.
    pub fn without_load_uncertainty(&self) -> MarketCase {
        let mut c = self.clone();
        for l in &mut c.loads {
            l.max_deviation.iter_mut().for_each(|d| *d = 0.0);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_json(cap: f64, unit_bus: &str) -> String {
        format!(
            r#"{{
  "horizon": 2,
  "buses": [{{"name": "1"}}, {{"name": "2"}}],
  "lines": [{{"from": "1", "to": "2", "reactance": 0.1, "capacity": {cap}}}],
  "units": [{{"name": "G", "bus": "{unit_bus}", "cost_energy": 10, "cost_startup": 0, "cost_shutdown": 0,
              "p_min": 0, "p_max": 100, "ramp_up": 50, "ramp_down": 50, "startup_ramp": 50, "shutdown_ramp": 50,
              "min_up": 1, "min_down": 1, "initial_status": {{"on": true, "hours": 5}}, "initial_output": 10}}],
  "loads": [{{"name": "L", "bus": "2", "forecast": [10, 20], "max_deviation": [0, 0]}}],
  "slack_bus": "2"
}}"#
        )
    }

    #[test]
    fn bundled_case_has_table_values() {
        let c = pjm5();
        let a = &c.units[c.unit_index("A").unwrap()];
        assert_eq!(a.ramp_up, 25.0);
        assert_eq!(a.cost_startup, 360.0);
        assert_eq!(a.cost_shutdown, 40.0);
        assert_eq!((a.min_up, a.min_down), (4, 3));
        let e = &c.units[c.unit_index("E").unwrap()];
        assert_eq!((e.ramp_up, e.cost_startup, e.cost_shutdown, e.min_up, e.min_down), (80.0, 550.0, 90.0, 3, 3));
        assert_eq!(c.horizon, 24);
        assert_eq!(c.buses.len(), 5);
    }

    #[test]
    fn zero_capacity_rejected() {
        let err = MarketCase::from_json(&tiny_json(0.0, "1")).unwrap_err();
        assert!(matches!(err, CaseError::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_bus_rejected() {
        let err = MarketCase::from_json(&tiny_json(100.0, "Z")).unwrap_err();
        match err {
            CaseError::Validation(msg) => assert!(msg.contains("`Z`")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = tiny_json(100.0, "1").replace(", \"capacity\": 100", "");
        let err = MarketCase::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("capacity"), "{err}");
    }

    #[test]
    fn two_bus_gsf() {
        let c = MarketCase::from_json(&tiny_json(100.0, "1")).unwrap();
        assert!((c.gsf[0][0] - 1.0).abs() < 1e-12);
        assert_eq!(c.gsf[0][1], 0.0);
    }

    #[test]
    fn json_round_trip() {
        let c = pjm5();
        let back = MarketCase::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn net_injection_arithmetic() {
        let c = MarketCase::from_json(&tiny_json(100.0, "2")).unwrap();
        let inj = c.net_injection(&[100.0], &[], &[60.0]);
        assert_eq!(inj, vec![0.0, 40.0]);
        let zero = c.net_injection(&[0.0], &[], &[0.0]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }
}

#[cfg(test)]
mod network_tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use serde_json::json;

    fn network(buses: &[&str], lines: &[(&str, &str, Option<f64>)], slack: &str) -> String {
        let lines: Vec<_> = lines
            .iter()
            .map(|(f, t, x)| json!({ "name": format!("{f}-{t}"), "from": f, "to": t, "reactance": x, "capacity": 100.0 }))
            .collect();
        json!({
            "horizon": 1,
            "buses": buses.iter().map(|b| json!({ "name": b })).collect::<Vec<_>>(),
            "lines": lines,
            "units": [{
                "name": "G", "bus": buses[0], "cost_energy": 10, "cost_startup": 0, "cost_shutdown": 0,
                "p_min": 0, "p_max": 100, "ramp_up": 100, "ramp_down": 100, "startup_ramp": 100, "shutdown_ramp": 100,
                "min_up": 1, "min_down": 1, "initial_status": { "on": true, "hours": 1 }, "initial_output": 0
            }],
            "loads": [{ "name": "L", "bus": slack, "forecast": [10], "max_deviation": [0] }],
            "slack_bus": slack
        })
        .to_string()
    }

    /// Line flows from the reduced B matrix, solved directly.
    fn dc_flows(case: &MarketCase, inj: &[f64]) -> Vec<f64> {
        let n = case.buses.len();
        let keep: Vec<usize> = (0..n).filter(|&b| b != case.slack_bus).collect();
        let mut b = DMatrix::zeros(n, n);
        for l in &case.lines {
            let y = 1.0 / l.reactance.unwrap();
            b[(l.from_bus, l.from_bus)] += y;
            b[(l.to_bus, l.to_bus)] += y;
            b[(l.from_bus, l.to_bus)] -= y;
            b[(l.to_bus, l.from_bus)] -= y;
        }
        let br = DMatrix::from_fn(keep.len(), keep.len(), |i, j| b[(keep[i], keep[j])]);
        let pr = DVector::from_iterator(keep.len(), keep.iter().map(|&k| inj[k]));
        let theta_r = br.lu().solve(&pr).unwrap();
        let mut theta = vec![0.0; n];
        for (i, &k) in keep.iter().enumerate() {
            theta[k] = theta_r[i];
        }
        case.lines.iter().map(|l| (theta[l.from_bus] - theta[l.to_bus]) / l.reactance.unwrap()).collect()
    }

    fn flows(case: &MarketCase, inj: &[f64]) -> Vec<f64> {
        case.gsf.iter().map(|row| row.iter().zip(inj).map(|(g, p)| g * p).sum()).collect()
    }

    #[test]
    fn triangle_splits_two_thirds_one_third() {
        let case = MarketCase::from_json(&network(
            &["1", "2", "3"],
            &[("1", "2", Some(0.1)), ("1", "3", Some(0.1)), ("2", "3", Some(0.1))],
            "3",
        ))
        .unwrap();
        let f = flows(&case, &[1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(f[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[2], 1.0 / 3.0, epsilon = 1e-12);
        let oracle = dc_flows(&case, &[1.0, 0.0, -1.0]);
        for (a, b) in f.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn slack_injection_moves_nothing() {
        let case = pjm5();
        for row in &case.gsf {
            assert_eq!(row[case.slack_bus], 0.0);
        }
        let mut inj = vec![0.0; case.buses.len()];
        inj[case.slack_bus] = 250.0;
        assert!(flows(&case, &inj).iter().all(|f| *f == 0.0));
    }

    #[test]
    fn bundled_case_matches_b_matrix_oracle() {
        let case = pjm5();
        let inj = [120.0, -80.0, 45.0, -30.0, 10.0];
        let balanced: Vec<f64> = {
            let mut v = inj.to_vec();
            v[case.slack_bus] -= inj.iter().sum::<f64>();
            v
        };
        let oracle = dc_flows(&case, &balanced);
        for (a, b) in flows(&case, &balanced).iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn radial_network_flows_follow_the_tree() {
        // 1 - 2 - 3, slack at 3: bus 1 injection crosses both lines.
        let case =
            MarketCase::from_json(&network(&["1", "2", "3"], &[("1", "2", Some(0.2)), ("2", "3", Some(0.05))], "3")).unwrap();
        assert_abs_diff_eq!(case.gsf[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(case.gsf[1][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(case.gsf[0][1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(case.gsf[1][1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let err = MarketCase::from_json(&network(&["1", "2", "3"], &[("1", "2", Some(0.1))], "1")).unwrap_err();
        assert!(matches!(err, CaseError::Network(_)), "{err}");
    }

    #[test]
    fn missing_reactance_is_rejected() {
        let err = MarketCase::from_json(&network(&["1", "2"], &[("1", "2", None)], "2")).unwrap_err();
        assert!(matches!(err, CaseError::Network(_)), "{err}");
    }

    #[test]
    fn bundled_injection_matches_grouped_sums() {
        let case = pjm5();
        let units: Vec<f64> = (0..case.units.len()).map(|i| 50.0 + 10.0 * i as f64).collect();
        let wind: Vec<f64> = case.wind_farms.iter().map(|w| w.forecast[0]).collect();
        let load: Vec<f64> = case.loads.iter().map(|l| l.forecast[0]).collect();
        let inj = case.net_injection(&units, &wind, &load);
        for b in 0..case.buses.len() {
            let mut expect = 0.0;
            for (i, u) in case.units.iter().enumerate() {
                if u.bus == b {
                    expect += units[i];
                }
            }
            for (j, w) in case.wind_farms.iter().enumerate() {
                if w.bus == b {
                    expect += wind[j];
                }
            }
            for (d, l) in case.loads.iter().enumerate() {
                if l.bus == b {
                    expect -= load[d];
                }
            }
            assert_abs_diff_eq!(inj[b], expect, epsilon = 1e-12);
        }
    }
}
