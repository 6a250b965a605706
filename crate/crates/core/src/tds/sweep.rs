use super::{classify_tis, simulate, FaultScenario, GeneratorTrip, SimConfig, TdsError, TisLabel, TrajectoryRecord};
use crate::dispatch::DispatchSolution;
use crate::grid::GridCase;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sampling box for random contingencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRanges {
    /// Candidate line ids; all in-service lines when empty.
    #[serde(default)]
    pub lines: Vec<usize>,
    pub duration: (f64, f64),
    pub location: (f64, f64),
    pub load_scale: (f64, f64),
    pub fault_start: f64,
    #[serde(default)]
    pub generator_trip: Option<GeneratorTrip>,
}

impl Default for SweepRanges {
    fn default() -> Self {
        SweepRanges {
            lines: vec![],
            duration: (0.06, 0.4),
            location: (0.0, 1.0),
            load_scale: (1.0, 1.6),
            fault_start: 1.0,
            generator_trip: None,
        }
    }
}

/// One scenario of a sweep with its outcome or the failure text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepItem<T> {
    pub index: usize,
    pub seed: u64,
    pub scenario: FaultScenario,
    pub result: Result<T, String>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.gen_range(lo..hi) } else { lo }
}

impl SweepRanges {
    pub fn validate(&self, case: &GridCase) -> Result<(), TdsError> {
        let bad = |m: &str| Err(TdsError::Scenario(m.to_string()));
        for (name, (lo, hi)) in [("duration", self.duration), ("location", self.location), ("load_scale", self.load_scale)] {
            if !(lo <= hi) {
                return bad(&format!("{name} range is reversed"));
            }
        }
        if self.duration.0 < 0.0 || self.location.0 < 0.0 || self.location.1 > 1.0 || self.load_scale.0 <= 0.0 {
            return bad("range outside the admissible domain");
        }
        for l in &self.lines {
            if case.line_index(*l).is_none() {
                return bad(&format!("line {l} does not exist"));
            }
        }
        if self.candidate_lines(case).is_empty() {
            return bad("no candidate lines");
        }
        Ok(())
    }

    fn candidate_lines(&self, case: &GridCase) -> Vec<usize> {
        if self.lines.is_empty() {
            case.lines.iter().filter(|l| l.is_in_service()).map(|l| l.id).collect()
        } else {
            self.lines.clone()
        }
    }

    /// Draws `count` scenarios; identical for identical seeds.
    pub fn draw(&self, case: &GridCase, count: usize, seed: u64) -> Vec<FaultScenario> {
        let lines = self.candidate_lines(case);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let line = lines[rng.gen_range(0..lines.len())];
                FaultScenario {
                    line,
                    duration: uniform(&mut rng, self.duration),
                    location: uniform(&mut rng, self.location),
                    load_scale: uniform(&mut rng, self.load_scale),
                    fault_start: self.fault_start,
                    generator_trip: self.generator_trip,
                }
            })
            .collect()
    }
}

/// Simulates every scenario in parallel and maps each trajectory through
/// `f` inside the worker. Failures are kept per item; results are in
/// scenario order.
pub fn sweep_map<T, F>(
    case: &GridCase,
    dispatch: &DispatchSolution,
    scenarios: &[FaultScenario],
    seed: u64,
    cfg: &SimConfig,
    f: F,
) -> Vec<SweepItem<T>>
where
    T: Send,
    F: Fn(&FaultScenario, TrajectoryRecord) -> Result<T, String> + Sync,
{
    scenarios
        .par_iter()
        .enumerate()
        .map(|(index, scn)| {
            let result = simulate(case, dispatch, scn, cfg).map_err(|e| e.to_string()).and_then(|t| f(scn, t));
            if let Err(e) = &result {
                log::warn!("scenario {index} failed: {e}");
            }
            SweepItem { index, seed, scenario: *scn, result }
        })
        .collect()
}

/// Draws `count` scenarios from `ranges`, simulates and labels each.
pub fn sweep_scenarios(
    case: &GridCase,
    dispatch: &DispatchSolution,
    count: usize,
    ranges: &SweepRanges,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Vec<SweepItem<(TrajectoryRecord, TisLabel)>>, TdsError> {
    if count == 0 {
        return Err(TdsError::Scenario("count must be >= 1".into()));
    }
    ranges.validate(case)?;
    cfg.validate()?;
    let scenarios = ranges.draw(case, count, seed);
    Ok(sweep_map(case, dispatch, &scenarios, seed, cfg, |_, t| {
        let label = classify_tis(&t);
        Ok((t, label))
    }))
}
