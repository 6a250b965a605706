//! CSV renderings of trajectories.

use super::{EventKind, TrajectoryRecord};
use std::fmt::Write;

pub const TRAJECTORY_HEADER: &str = "t,machine,delta_deg,omega_pu,id,iq,vd,vq,te,pg,qg";

/// One row per sample and machine.
pub fn trajectory_csv(traj: &TrajectoryRecord) -> String {
    let mut out = String::with_capacity(traj.samples.len() * traj.n_machines() * 120);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.samples) {
        for (info, m) in traj.machines.iter().zip(s) {
            writeln!(
                out,
                "{t},{},{},{},{},{},{},{},{},{},{}",
                info.name, m.delta_deg, m.omega, m.id, m.iq, m.vd, m.vq, m.te, m.pg, m.qg
            )
            .unwrap();
        }
    }
    out
}

pub fn events_csv(traj: &TrajectoryRecord) -> String {
    let mut out = String::from("t,event,detail\n");
    for e in &traj.events {
        let (kind, detail) = match &e.kind {
            EventKind::FaultOn { line, location } => ("fault_on", format!("line {line} at {location}")),
            EventKind::FaultOff { line } => ("fault_off", format!("line {line}")),
            EventKind::Trip { machine } => ("trip", traj.machines[*machine].name.clone()),
            EventKind::Abort { reason } => ("abort", reason.replace(',', ";")),
        };
        writeln!(out, "{},{kind},{detail}", e.t).unwrap();
    }
    out
}

pub fn coi_csv(traj: &TrajectoryRecord) -> String {
    let mut out = String::from("t,coi_pu,coi_dev_hz\n");
    for (t, c) in traj.times.iter().zip(&traj.coi) {
        writeln!(out, "{t},{c},{}", (c - 1.0) * traj.nominal_freq).unwrap();
    }
    out
}
