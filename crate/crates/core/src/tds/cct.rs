use super::{classify_tis, simulate, FaultScenario, SimConfig, TdsError};
use crate::dispatch::DispatchSolution;
use crate::grid::GridCase;

fn tis_class(case: &GridCase, dispatch: &DispatchSolution, base: &FaultScenario, cfg: &SimConfig, tau: f64) -> Result<u8, TdsError> {
    let scn = FaultScenario { duration: tau, ..*base };
    let traj = simulate(case, dispatch, &scn, cfg)?;
    Ok(classify_tis(&traj).class)
}

/// Critical clearing time of the fault described by `base` (its duration is
/// ignored), found by bisection on the duration. Returns the stable end of
/// the final bracket; `tol` defaults to two integration steps.
pub fn compute_cct(
    case: &GridCase,
    dispatch: &DispatchSolution,
    base: &FaultScenario,
    cfg: &SimConfig,
    bracket: (f64, f64),
    tol: Option<f64>,
) -> Result<f64, TdsError> {
    let tol = tol.unwrap_or(2.0 * cfg.step);
    if !(tol > 0.0) {
        return Err(TdsError::Config("CCT tolerance must be > 0".into()));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo) {
        return Err(TdsError::Bracket { lo, hi, detail: "need 0 <= lo < hi".into() });
    }
    // The label is settled once the angles separate, so there is no need
    // to integrate further.
    let fast = SimConfig { stop_on_separation: true, ..*cfg };
    if tis_class(case, dispatch, base, &fast, lo)? != 0 {
        return Err(TdsError::Bracket { lo, hi, detail: "lower end is unstable".into() });
    }
    if tis_class(case, dispatch, base, &fast, hi)? != 1 {
        return Err(TdsError::Bracket { lo, hi, detail: "upper end is stable".into() });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if tis_class(case, dispatch, base, &fast, mid)? == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    log::debug!("CCT bracket [{lo:.5}, {hi:.5}] s");
    Ok(lo)
}
