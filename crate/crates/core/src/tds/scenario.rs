use super::TdsError;
use crate::grid::GridCase;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrip {
    /// Machine index (SGs first, then IBRs).
    pub machine: usize,
    /// s.
    pub time: f64,
}

/// One three-phase short-circuit contingency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    /// Line id.
    pub line: usize,
    /// Fault duration τ, s. Zero means no fault.
    pub duration: f64,
    /// Fault position along the line, fraction from `from_bus`.
    pub location: f64,
    /// Load multiplier k applied to every bus demand.
    pub load_scale: f64,
    /// s.
    pub fault_start: f64,
    #[serde(default)]
    pub generator_trip: Option<GeneratorTrip>,
}

impl FaultScenario {
    pub fn clear_time(&self) -> f64 {
        self.fault_start + self.duration
    }

    pub fn validate(&self, case: &GridCase) -> Result<(), TdsError> {
        let li = case
            .line_index(self.line)
            .ok_or_else(|| TdsError::Scenario(format!("line {} does not exist", self.line)))?;
        if !case.lines[li].is_in_service() && self.duration > 0.0 {
            return Err(TdsError::Scenario(format!("line {} is out of service", self.line)));
        }
        if !(0.0..=1.0).contains(&self.location) {
            return Err(TdsError::Scenario(format!("location {} outside [0, 1]", self.location)));
        }
        if !(self.duration >= 0.0) {
            return Err(TdsError::Scenario("duration must be >= 0".into()));
        }
        if !(self.fault_start >= 0.0) {
            return Err(TdsError::Scenario("fault_start must be >= 0".into()));
        }
        if !(self.load_scale > 0.0) {
            return Err(TdsError::Scenario("load_scale must be > 0".into()));
        }
        if let Some(trip) = self.generator_trip {
            let n = case.sgs.len() + case.ibrs.len();
            if trip.machine >= n {
                return Err(TdsError::Scenario(format!("trip of machine {} but the case has {n}", trip.machine)));
            }
            if !(trip.time >= 0.0) {
                return Err(TdsError::Scenario("trip time must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Line statuses and fault flag at time `t`: the faulted line is out and
/// the flag raised for `t ∈ [t_start, t_start + τ]`; the line is restored
/// at clearance.
pub fn scenario_schedule(case: &GridCase, scn: &FaultScenario, t: f64) -> (Vec<u8>, u8) {
    let mut status = case.line_status();
    let on = scn.duration > 0.0 && t >= scn.fault_start && t <= scn.clear_time();
    if on {
        if let Some(li) = case.line_index(scn.line) {
            status[li] = 0;
        }
    }
    (status, on as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;

    fn scn() -> FaultScenario {
        FaultScenario { line: 33, duration: 0.1, location: 0.95, load_scale: 1.0, fault_start: 2.0, generator_trip: None }
    }

    #[test]
    fn fault_starts_at_t_start() {
        let case = bundled("case39").unwrap();
        let (st, flag) = scenario_schedule(&case, &scn(), 2.0);
        assert_eq!(flag, 1);
        assert_eq!(st[case.line_index(33).unwrap()], 0);
        assert_eq!(st.iter().filter(|s| **s == 0).count(), 1);
    }

    #[test]
    fn restored_after_clearance() {
        let case = bundled("case39").unwrap();
        let (st, flag) = scenario_schedule(&case, &scn(), 2.1 + 1e-3);
        assert_eq!(flag, 0);
        assert!(st.iter().all(|s| *s == 1));
    }

    #[test]
    fn prefault_all_in_service() {
        let case = bundled("case39").unwrap();
        let (st, flag) = scenario_schedule(&case, &scn(), 0.0);
        assert_eq!(flag, 0);
        assert!(st.iter().all(|s| *s == 1));
    }
}
