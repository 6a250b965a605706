//! Time-domain simulation of the classical swing model.
//!
//! Every SG is a constant EMF behind `x'd`; every IBR is a virtual
//! synchronous machine, a constant EMF behind its coupling reactance with
//! the dispatched virtual inertia and damping. Loads are constant
//! conductances. Machines are ordered SGs first, then IBRs.

mod cct;
mod eigen;
pub mod io;
mod scenario;
mod sim;
mod sweep;
mod tis;

pub use cct::compute_cct;
pub use eigen::{jacobian, linearize_eigenvalues};
pub use scenario::{scenario_schedule, FaultScenario, GeneratorTrip};
pub use sim::{prefault_equilibrium, simulate, Equilibrium, MachineKind, MachineSet};
pub use sweep::{sweep_map, sweep_scenarios, SweepItem, SweepRanges};
pub use tis::{classify_tis, coi_frequency, TisLabel};

use crate::grid::GridError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TdsError {
    #[error("no pre-fault equilibrium: {0}")]
    NoEquilibrium(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("dispatch does not match the case: {0}")]
    Dispatch(String),
    #[error("CCT bracket [{lo}, {hi}] does not straddle the stability boundary ({detail})")]
    Bracket { lo: f64, hi: f64, detail: String },
    #[error("all machines tripped at t = {0}")]
    AllTripped(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Integration and sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// RK4 step, s.
    pub step: f64,
    /// s.
    pub horizon: f64,
    /// Measurement period, s.
    pub sample_period: f64,
    /// End the run once the angle spread passes 360° (the label can no
    /// longer change). Used by CCT searches.
    #[serde(default)]
    pub stop_on_separation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { step: 1e-3, horizon: 7.0, sample_period: 8e-3, stop_on_separation: false }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), TdsError> {
        if !(self.step > 0.0) {
            return Err(TdsError::Config("step must be > 0".into()));
        }
        if !(self.sample_period >= self.step * (1.0 - 1e-12)) {
            return Err(TdsError::Config("step must not exceed sample_period".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(TdsError::Config("horizon must be > 0".into()));
        }
        Ok(())
    }
}

/// Channels recorded per machine and sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineSample {
    pub delta_deg: f64,
    pub omega: f64,
    pub id: f64,
    pub iq: f64,
    pub vd: f64,
    pub vq: f64,
    pub te: f64,
    pub pg: f64,
    pub qg: f64,
}

impl MachineSample {
    pub const CHANNELS: [&'static str; 9] = ["id", "iq", "vd", "vq", "delta", "omega", "te", "pg", "qg"];

    /// Channel by position in [`CHANNELS`](Self::CHANNELS).
    pub fn channel(&self, k: usize) -> f64 {
        match k {
            0 => self.id,
            1 => self.iq,
            2 => self.vd,
            3 => self.vq,
            4 => self.delta_deg,
            5 => self.omega,
            6 => self.te,
            7 => self.pg,
            8 => self.qg,
            _ => panic!("channel index {k} out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    FaultOn { line: usize, location: f64 },
    FaultOff { line: usize },
    Trip { machine: usize },
    Abort { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub name: String,
    pub kind: MachineKind,
    pub bus: u32,
    /// Inertia constant used for COI weighting, s.
    pub h: f64,
    pub trip_time: Option<f64>,
}

impl MachineInfo {
    pub fn alive_at(&self, t: f64) -> bool {
        self.trip_time.map_or(true, |tt| t < tt)
    }
}

/// Sampled machine states of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub machines: Vec<MachineInfo>,
    /// `samples[k][m]`.
    pub samples: Vec<Vec<MachineSample>>,
    /// COI speed per sample, pu.
    pub coi: Vec<f64>,
    /// Angle of the infinite bus, when the case has one (deg).
    pub reference_deg: Option<f64>,
    pub nominal_freq: f64,
    pub events: Vec<Event>,
    /// Set when the run stopped early on a speed excursion.
    pub aborted: Option<String>,
}

impl TrajectoryRecord {
    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    /// Series of one channel for one machine.
    pub fn series(&self, machine: usize, channel: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[machine].channel(channel)).collect()
    }

    /// Adds `c` degrees to every angle, including the reference.
    pub fn shift_angles(&mut self, c: f64) {
        for s in &mut self.samples {
            for m in s.iter_mut() {
                m.delta_deg += c;
            }
        }
        if let Some(r) = &mut self.reference_deg {
            *r += c;
        }
    }

    /// Largest |ω − 1| over all machines and samples.
    pub fn max_speed_deviation(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.iter().map(|m| (m.omega - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}
