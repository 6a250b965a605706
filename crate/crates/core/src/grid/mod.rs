//! Static grid description and network matrices.
//!
//! A [`GridCase`] is loaded from a JSON case file (see `docs/case-schema.json`)
//! and validated once; everything downstream treats it as immutable. All
//! electrical quantities are per-unit on `system.base_power`, money is in
//! plain dollars.

mod gsf;
mod network;

pub use gsf::{compute_gsf, GsfMatrix};
pub use network::{build_admittance, kron_reduce, CMatrix, FaultLocation};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use thiserror::Error;

/// Shunt conductance used to represent a bolted three-phase fault (pu).
pub const DEFAULT_FAULT_SHUNT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("case parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {field}: {reason}")]
    Invariant { field: String, reason: String },
    #[error("unknown bundled case `{0}`")]
    UnknownBundled(String),
    #[error("line status vector has {got} entries, case has {expected} lines")]
    StatusLength { expected: usize, got: usize },
    #[error("fault on nonexistent line {0}")]
    NoSuchLine(usize),
    #[error("fault location {0} outside [0, 1]")]
    FaultLocation(f64),
    #[error("faulted line {0} must be switched out in the status vector")]
    FaultedLineInService(usize),
    #[error("singular interior block during Kron reduction (islanded subnetwork without machines)")]
    SingularInterior,
    #[error("network is disconnected: bus {0} unreachable from the slack bus")]
    Disconnected(u32),
}

/// Quadratic cost coefficients `c0 + c1 P + c2 P^2` ($, $/pu·h, $/pu²·h).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadCost {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadCost {
    pub fn eval(&self, p: f64) -> f64 {
        self.c0 + self.c1 * p + self.c2 * p * p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    #[serde(default)]
    pub name: String,
    /// S_rms, MVA.
    pub base_power: f64,
    /// Hz.
    pub nominal_freq: f64,
    /// Terminal voltage magnitude targeted by the pre-fault initialisation.
    #[serde(default = "one")]
    pub voltage_setpoint: f64,
    /// Reference bus for shift factors. Defaults to the bus of the largest SG.
    #[serde(default)]
    pub slack_bus: Option<u32>,
    /// Bus held at 1∠0 pu as an ideal source (single-machine studies).
    #[serde(default)]
    pub infinite_bus: Option<u32>,
    #[serde(default = "default_fault_shunt")]
    pub fault_shunt: f64,
    /// Frequency bias B of the balancing area, pu per 0.1 Hz (negative).
    #[serde(default = "default_bias")]
    pub frequency_bias: f64,
    /// Shared SG cost coefficients, used for SGs without their own `cost`.
    pub sg_cost: QuadCost,
    /// Shared IBR cost coefficients (c3, c4, c5 stored as c0, c1, c2).
    pub ibr_cost: QuadCost,
}

fn one() -> f64 {
    1.0
}
fn default_fault_shunt() -> f64 {
    DEFAULT_FAULT_SHUNT
}
fn default_bias() -> f64 {
    -0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: u32,
    pub to_bus: u32,
    pub reactance: f64,
    pub flow_min: f64,
    pub flow_max: f64,
    /// η, faults per year.
    #[serde(default)]
    pub fault_rate: f64,
    /// ξ, 0 or 1.
    #[serde(default = "in_service_default")]
    pub in_service: u8,
}

fn in_service_default() -> u8 {
    1
}

impl Line {
    pub fn is_in_service(&self) -> bool {
        self.in_service == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    #[serde(default)]
    pub id: String,
    pub bus: u32,
    /// H, seconds on system base.
    pub inertia: f64,
    pub damping: f64,
    pub transient_reactance: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// γ^U, pu per 10 min.
    pub ramp_up: f64,
    pub ramp_down: f64,
    #[serde(default)]
    pub cost: Option<QuadCost>,
    pub reserve_price_up: f64,
    pub reserve_price_down: f64,
    /// P_{g,t-1}.
    pub prev_output: f64,
    #[serde(default)]
    pub mvar_rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbrParams {
    #[serde(default)]
    pub id: String,
    pub bus: u32,
    pub p_max: f64,
    /// M_IBR^max, pu·s.
    pub inertia_max: f64,
    /// D_IBR^max, pu.
    pub damping_max: f64,
    #[serde(default)]
    pub cost: Option<QuadCost>,
    /// c6^M, $ per pu·s.
    pub inertia_price: f64,
    /// c7^D, $ per pu.
    pub damping_price: f64,
    /// Reactance between the VSG internal EMF and its terminal bus.
    pub coupling_reactance: f64,
    /// Inertia the converter control provides with no scheduled virtual inertia.
    #[serde(default)]
    pub inherent_inertia: f64,
    #[serde(default)]
    pub inherent_damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvFleetParams {
    #[serde(default)]
    pub id: String,
    pub bus: u32,
    pub reg_up_max: f64,
    pub reg_down_max: f64,
    pub reg_up_price: f64,
    pub reg_down_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusLoad {
    pub bus: u32,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirements {
    /// ΔD^U, pu.
    pub imbalance_up: f64,
    /// ΔD^D, pu.
    pub imbalance_down: f64,
    /// M_req at the case demand, pu·s.
    pub inertia: f64,
    /// D_req at the case demand, pu.
    pub damping: f64,
    /// When set, M_req and D_req are proportional to the scheduled demand.
    #[serde(default)]
    pub scale_with_demand: bool,
}

/// Validated static description of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub system: SystemInfo,
    pub buses: Vec<u32>,
    pub lines: Vec<Line>,
    pub sgs: Vec<SgParams>,
    #[serde(default)]
    pub ibrs: Vec<IbrParams>,
    #[serde(default)]
    pub evs: Vec<EvFleetParams>,
    pub loads: Vec<BusLoad>,
    pub requirements: Requirements,
}

const BUNDLED: &[(&str, &str)] = &[
    ("case_smib", include_str!("../../data/cases/case_smib.json")),
    ("case9ish", include_str!("../../data/cases/case9ish.json")),
    ("case39", include_str!("../../data/cases/case39.json")),
];

/// Names of the cases shipped with the crate.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Loads one of the bundled cases by name (`case39`, `case9ish`, `case_smib`).
pub fn bundled(name: &str) -> Result<GridCase, GridError> {
    let stem = name.trim_end_matches(".json");
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(_, t)| *t)
        .ok_or_else(|| GridError::UnknownBundled(name.to_string()))?;
    GridCase::from_json(text)
}

/// Reads and validates a case file. A bare bundled name is accepted when no
/// such file exists.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, GridError> {
    let path = path.as_ref();
    match std::fs::read_to_string(path) {
        Ok(text) => GridCase::from_json(&text),
        Err(e) => {
            let name = path.to_string_lossy();
            if e.kind() == std::io::ErrorKind::NotFound
                && bundled_names().any(|n| n == name.trim_end_matches(".json"))
            {
                bundled(&name)
            } else {
                Err(GridError::Io {
                    path: name.into_owned(),
                    source: e,
                })
            }
        }
    }
}

fn invariant(field: impl Into<String>, reason: impl Into<String>) -> GridError {
    GridError::Invariant {
        field: field.into(),
        reason: reason.into(),
    }
}

impl GridCase {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let case: GridCase = serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serialises")
    }

    /// Checks every type invariant; the error names the first failing field.
    pub fn validate(&self) -> Result<(), GridError> {
        let s = &self.system;
        if !(s.base_power > 0.0) {
            return Err(invariant("system.base_power", "must be > 0"));
        }
        if !(s.nominal_freq > 0.0) {
            return Err(invariant("system.nominal_freq", "must be > 0"));
        }
        if !(s.voltage_setpoint > 0.0) {
            return Err(invariant("system.voltage_setpoint", "must be > 0"));
        }
        if !(s.fault_shunt > 0.0) {
            return Err(invariant("system.fault_shunt", "must be > 0"));
        }
        if s.sg_cost.c2 < 0.0 {
            return Err(invariant("system.sg_cost.c2", "must be >= 0 (convexity)"));
        }
        if s.ibr_cost.c2 < 0.0 {
            return Err(invariant("system.ibr_cost.c2", "must be >= 0 (convexity)"));
        }
        if self.buses.is_empty() {
            return Err(invariant("buses", "no buses declared"));
        }
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(*b) {
                return Err(invariant("buses", format!("bus {b} declared twice")));
            }
        }
        let has = |b: u32| seen.contains(&b);
        for (name, bus) in [("system.slack_bus", s.slack_bus), ("system.infinite_bus", s.infinite_bus)] {
            if let Some(b) = bus {
                if !has(b) {
                    return Err(invariant(name, format!("bus {b} is not declared")));
                }
            }
        }
        let mut ids = HashSet::new();
        for (i, l) in self.lines.iter().enumerate() {
            let f = |x: &str| format!("lines[{i}].{x} (line {})", l.id);
            if !ids.insert(l.id) {
                return Err(invariant(f("id"), "duplicate line id"));
            }
            if !has(l.from_bus) {
                return Err(invariant(f("from_bus"), format!("bus {} is not declared", l.from_bus)));
            }
            if !has(l.to_bus) {
                return Err(invariant(f("to_bus"), format!("bus {} is not declared", l.to_bus)));
            }
            if l.from_bus == l.to_bus {
                return Err(invariant(f("to_bus"), "line connects a bus to itself"));
            }
            if !(l.reactance > 0.0) {
                return Err(invariant(f("reactance"), "must be > 0"));
            }
            if !(l.flow_min <= l.flow_max) {
                return Err(invariant(f("flow_min"), "must be <= flow_max"));
            }
            if !(l.fault_rate >= 0.0) {
                return Err(invariant(f("fault_rate"), "must be >= 0"));
            }
            if l.in_service > 1 {
                return Err(invariant(f("in_service"), "must be 0 or 1"));
            }
        }
        if self.sgs.is_empty() && self.ibrs.is_empty() {
            return Err(invariant("sgs", "case has no machines"));
        }
        for (i, g) in self.sgs.iter().enumerate() {
            let f = |x: &str| format!("sgs[{i}].{x}");
            if !has(g.bus) {
                return Err(invariant(f("bus"), format!("bus {} is not declared", g.bus)));
            }
            if Some(g.bus) == s.infinite_bus {
                return Err(invariant(f("bus"), "machine placed on the infinite bus"));
            }
            if !(g.inertia > 0.0) {
                return Err(invariant(f("inertia"), "must be > 0"));
            }
            if !(g.damping >= 0.0) {
                return Err(invariant(f("damping"), "must be >= 0"));
            }
            if !(g.transient_reactance > 0.0) {
                return Err(invariant(f("transient_reactance"), "must be > 0"));
            }
            if !(g.p_min >= 0.0 && g.p_min <= g.p_max) {
                return Err(invariant(f("p_min"), "must satisfy 0 <= p_min <= p_max"));
            }
            if !(g.ramp_up >= 0.0 && g.ramp_down >= 0.0) {
                return Err(invariant(f("ramp_up"), "ramp limits must be >= 0"));
            }
            if let Some(c) = g.cost {
                if c.c2 < 0.0 {
                    return Err(invariant(f("cost.c2"), "must be >= 0 (convexity)"));
                }
            }
        }
        for (i, r) in self.ibrs.iter().enumerate() {
            let f = |x: &str| format!("ibrs[{i}].{x}");
            if !has(r.bus) {
                return Err(invariant(f("bus"), format!("bus {} is not declared", r.bus)));
            }
            if Some(r.bus) == s.infinite_bus {
                return Err(invariant(f("bus"), "machine placed on the infinite bus"));
            }
            for (name, v) in [
                ("p_max", r.p_max),
                ("inertia_max", r.inertia_max),
                ("damping_max", r.damping_max),
                ("inherent_inertia", r.inherent_inertia),
                ("inherent_damping", r.inherent_damping),
            ] {
                if !(v >= 0.0) {
                    return Err(invariant(f(name), "must be >= 0"));
                }
            }
            if !(r.coupling_reactance > 0.0) {
                return Err(invariant(f("coupling_reactance"), "must be > 0"));
            }
            if let Some(c) = r.cost {
                if c.c2 < 0.0 {
                    return Err(invariant(f("cost.c2"), "must be >= 0 (convexity)"));
                }
            }
        }
        for (i, e) in self.evs.iter().enumerate() {
            let f = |x: &str| format!("evs[{i}].{x}");
            if !has(e.bus) {
                return Err(invariant(f("bus"), format!("bus {} is not declared", e.bus)));
            }
            for (name, v) in [
                ("reg_up_max", e.reg_up_max),
                ("reg_down_max", e.reg_down_max),
                ("reg_up_price", e.reg_up_price),
                ("reg_down_price", e.reg_down_price),
            ] {
                if !(v >= 0.0) {
                    return Err(invariant(f(name), "must be >= 0"));
                }
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if !has(l.bus) {
                return Err(invariant(format!("loads[{i}].bus"), format!("bus {} is not declared", l.bus)));
            }
            if !(l.p >= 0.0) {
                return Err(invariant(format!("loads[{i}].p"), "demand must be >= 0"));
            }
        }
        let req = &self.requirements;
        for (name, v) in [
            ("imbalance_up", req.imbalance_up),
            ("imbalance_down", req.imbalance_down),
            ("inertia", req.inertia),
            ("damping", req.damping),
        ] {
            if !(v >= 0.0) {
                return Err(invariant(format!("requirements.{name}"), "must be >= 0"));
            }
        }
        let m_max: f64 = self.ibrs.iter().map(|r| r.inertia_max).sum();
        let d_max: f64 = self.ibrs.iter().map(|r| r.damping_max).sum();
        if req.inertia > m_max + 1e-12 {
            return Err(invariant(
                "requirements.inertia",
                format!("M_req {} exceeds total IBR inertia capacity {m_max}", req.inertia),
            ));
        }
        if req.damping > d_max + 1e-12 {
            return Err(invariant(
                "requirements.damping",
                format!("D_req {} exceeds total IBR damping capacity {d_max}", req.damping),
            ));
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, bus: u32) -> usize {
        self.bus_positions()[&bus]
    }

    pub fn bus_positions(&self) -> BTreeMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (*b, i)).collect()
    }

    /// Position of a line id in `lines`.
    pub fn line_index(&self, id: usize) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// Demand per bus position, pu.
    pub fn bus_demand(&self) -> Vec<f64> {
        let pos = self.bus_positions();
        let mut d = vec![0.0; self.n_buses()];
        for l in &self.loads {
            d[pos[&l.bus]] += l.p;
        }
        d
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }

    /// ξ for every line as declared in the case.
    pub fn line_status(&self) -> Vec<u8> {
        self.lines.iter().map(|l| l.in_service).collect()
    }

    pub fn sg_cost(&self, g: usize) -> QuadCost {
        self.sgs[g].cost.unwrap_or(self.system.sg_cost)
    }

    pub fn ibr_cost(&self, i: usize) -> QuadCost {
        self.ibrs[i].cost.unwrap_or(self.system.ibr_cost)
    }

    /// Reference bus for shift factors: declared slack, else the infinite
    /// bus, else the bus of the SG with the largest `p_max`.
    pub fn slack_bus(&self) -> u32 {
        if let Some(b) = self.system.slack_bus.or(self.system.infinite_bus) {
            return b;
        }
        let mut best: Option<&SgParams> = None;
        for g in &self.sgs {
            if best.map_or(true, |b| g.p_max > b.p_max) {
                best = Some(g);
            }
        }
        match best {
            Some(g) => g.bus,
            None => self.ibrs[0].bus,
        }
    }

    /// Angular synchronous speed ω_s, rad/s.
    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.system.nominal_freq
    }

    /// Short content hash used in run manifests.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("case serialises");
        // FNV-1a; collisions only weaken a reproducibility hint.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_case39_shape() {
        let c = bundled("case39").unwrap();
        assert_eq!(c.buses.len(), 39);
        assert_eq!(c.lines.len(), 46);
        assert_eq!(c.sgs.len(), 10);
    }

    #[test]
    fn bundled_smib_shape() {
        let c = bundled("case_smib").unwrap();
        assert_eq!(c.buses.len(), 2);
        assert_eq!(c.lines.len(), 1);
        assert_eq!(c.sgs.len(), 1);
        assert_eq!(c.system.infinite_bus, Some(2));
    }

    #[test]
    fn zero_reactance_names_the_line() {
        let mut c = bundled("case9ish").unwrap();
        c.lines[4].reactance = 0.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("lines[4].reactance"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn parse_error_carries_position() {
        let err = GridCase::from_json("{\n \"system\": 3\n}").unwrap_err();
        match err {
            GridError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn undeclared_endpoint_rejected() {
        let mut c = bundled("case_smib").unwrap();
        c.lines[0].to_bus = 7;
        assert!(c.validate().unwrap_err().to_string().contains("to_bus"));
    }

    #[test]
    fn requirement_above_capacity_rejected() {
        let mut c = bundled("case9ish").unwrap();
        c.requirements.inertia = 1e3;
        assert!(c.validate().unwrap_err().to_string().contains("requirements.inertia"));
    }

    #[test]
    fn negative_curvature_rejected() {
        let mut c = bundled("case9ish").unwrap();
        c.system.sg_cost.c2 = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn slack_defaults_to_largest_sg() {
        let c = bundled("case39").unwrap();
        assert_eq!(c.slack_bus(), 39);
        let c = bundled("case_smib").unwrap();
        assert_eq!(c.slack_bus(), 2);
    }

    #[test]
    fn load_case_falls_back_to_bundled_name() {
        let c = load_case("case9ish").unwrap();
        assert_eq!(c.sgs.len(), 3);
        assert!(matches!(load_case("/nonexistent/x.json"), Err(GridError::Io { .. })));
    }
}
