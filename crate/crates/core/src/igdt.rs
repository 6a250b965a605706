//! Interrupted-load estimation from the area control error and the
//! info-gap robust dispatch.
//!
//! The robust problem nests a worst case over the fractional-deviation set
//! `{P_d : |P_d − P̂_d| ≤ σ P̂_d}` inside a search for the largest σ whose
//! worst-case cost fits the budget `(1 + θ) C_c`. Dispatch cost grows with
//! demand, so the worst case is the upper end of the set and the outer
//! search is a bisection on σ.

use crate::dispatch::{solve_vis, DispatchError, DispatchInput, DispatchSolution};
use crate::grid::GridCase;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IgdtError {
    #[error("frequency bias must be negative, got {0}")]
    BiasSign(f64),
    #[error("interrupted-load estimate {0} pu is not positive")]
    NonPositiveLoad(f64),
    #[error("invalid robust input: {0}")]
    Input(String),
    #[error("budget below nominal cost: dispatch at the forecast costs {cost} but the budget is {budget} (deficit {deficit})")]
    BudgetBelowNominal { cost: f64, budget: f64, deficit: f64 },
    #[error("dispatch at the forecast failed: {0}")]
    Dispatch(#[from] DispatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceInput {
    /// ΔP_tie, pu.
    pub tie_flow_change: f64,
    /// B, pu per 0.1 Hz. Negative.
    pub frequency_bias: f64,
    /// Δf, Hz.
    pub frequency_deviation: f64,
}

/// ACE = ΔP_tie − 10 B Δf.
pub fn compute_ace(input: &AceInput) -> Result<f64, IgdtError> {
    if !(input.frequency_bias < 0.0) {
        return Err(IgdtError::BiasSign(input.frequency_bias));
    }
    Ok(input.tie_flow_change - 10.0 * input.frequency_bias * input.frequency_deviation)
}

/// P̂_d = P_d + ACE.
pub fn estimate_interrupted_load(demand: f64, ace: f64) -> Result<f64, IgdtError> {
    let p = demand + ace;
    if p > 0.0 {
        Ok(p)
    } else {
        Err(IgdtError::NonPositiveLoad(p))
    }
}

/// Cost-maximising demand of the uncertainty set with horizon σ.
pub fn worst_case_demand(predicted: f64, sigma: f64) -> f64 {
    (1.0 + sigma) * predicted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustInput {
    /// P̂_d, pu.
    pub predicted_load: f64,
    /// θ.
    pub collapse_probability: f64,
    /// C_c, $.
    pub critical_cost: f64,
    #[serde(default = "default_sigma_cap")]
    pub sigma_cap: f64,
}

fn default_sigma_cap() -> f64 {
    2.0
}

pub const DEFAULT_SIGMA_TOL: f64 = 1e-5;
/// Relative slack under which the budget counts as binding.
pub const BINDING_REL: f64 = 1e-3;

impl RobustInput {
    pub fn budget(&self) -> f64 {
        (1.0 + self.collapse_probability) * self.critical_cost
    }

    fn validate(&self) -> Result<(), IgdtError> {
        if !(self.predicted_load > 0.0) {
            return Err(IgdtError::Input(format!("predicted load {} must be > 0", self.predicted_load)));
        }
        if !(self.critical_cost > 0.0) {
            return Err(IgdtError::Input(format!("critical cost {} must be > 0", self.critical_cost)));
        }
        if !(0.0..=1.0).contains(&self.collapse_probability) {
            return Err(IgdtError::Input(format!("θ = {} outside [0, 1]", self.collapse_probability)));
        }
        if !(self.sigma_cap >= 0.0) {
            return Err(IgdtError::Input("sigma_cap must be >= 0".into()));
        }
        Ok(())
    }
}

/// One trial of the bisection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub sigma: f64,
    pub demand: f64,
    /// Optimal dispatch cost, absent when the dispatch is infeasible.
    pub cost: Option<f64>,
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub sigma_star: f64,
    pub robust_dispatch: DispatchSolution,
    /// Cost of `robust_dispatch`, $.
    pub worst_case_cost: f64,
    /// (1 + θ) C_c, $.
    pub budget: f64,
    pub binding: bool,
    /// Set when dispatch infeasibility, not the budget, stopped σ.
    pub feasibility_capped: bool,
    pub trace: Vec<BisectionStep>,
}

/// Largest σ ∈ [0, sigma_cap] whose worst-case dispatch cost stays within
/// `(1 + θ) C_c`, to within `tol_sigma`.
pub fn solve_robust_vis(
    case: &GridCase,
    input: &RobustInput,
    tol_sigma: f64,
    dispatch_tol: f64,
) -> Result<RobustnessResult, IgdtError> {
    input.validate()?;
    if !(tol_sigma > 0.0) {
        return Err(IgdtError::Input("tol_sigma must be > 0".into()));
    }
    let budget = input.budget();
    let mut trace = Vec::new();
    let mut feasibility_capped = false;
    let trial = |sigma: f64, trace: &mut Vec<BisectionStep>| {
        let demand = worst_case_demand(input.predicted_load, sigma);
        let res = solve_vis(case, &DispatchInput::at_demand(case, demand), dispatch_tol);
        let step = BisectionStep {
            sigma,
            demand,
            cost: res.as_ref().ok().map(|s| s.total_cost),
            within_budget: res.as_ref().map_or(false, |s| s.total_cost <= budget),
        };
        log::debug!("σ = {sigma:.6}: {:?}", step.cost);
        trace.push(step);
        res
    };

    let nominal = trial(0.0, &mut trace)?;
    if nominal.total_cost > budget {
        return Err(IgdtError::BudgetBelowNominal {
            cost: nominal.total_cost,
            budget,
            deficit: nominal.total_cost - budget,
        });
    }
    let mut best = nominal;
    let (mut lo, mut hi) = (0.0, input.sigma_cap);
    match trial(hi, &mut trace) {
        Ok(s) if s.total_cost <= budget => {
            lo = hi;
            best = s;
        }
        Ok(_) => {}
        Err(_) => feasibility_capped = true,
    }
    while hi - lo > tol_sigma {
        let mid = 0.5 * (lo + hi);
        match trial(mid, &mut trace) {
            Ok(s) if s.total_cost <= budget => {
                lo = mid;
                best = s;
            }
            Ok(_) => {
                hi = mid;
                feasibility_capped = false;
            }
            Err(_) => {
                hi = mid;
                feasibility_capped = true;
            }
        }
    }
    let cost = best.total_cost;
    Ok(RobustnessResult {
        sigma_star: lo,
        robust_dispatch: best,
        worst_case_cost: cost,
        budget,
        binding: (budget - cost).abs() <= BINDING_REL * budget.abs(),
        feasibility_capped,
        trace,
    })
}

/// Structured text report of a robust run.
pub fn robust_report(input: &RobustInput, res: &RobustnessResult) -> String {
    let mut s = String::new();
    s.push_str(&format!("theta = {}\n", input.collapse_probability));
    s.push_str(&format!("critical_cost = {}\n", input.critical_cost));
    s.push_str(&format!("predicted_load = {}\n", input.predicted_load));
    s.push_str(&format!("budget = {}\n", res.budget));
    s.push_str(&format!("sigma_star = {}\n", res.sigma_star));
    s.push_str(&format!("worst_case_cost = {}\n", res.worst_case_cost));
    s.push_str(&format!("binding = {}\n", res.binding));
    s.push_str(&format!("feasibility_capped = {}\n", res.feasibility_capped));
    s.push_str("trace:\n  sigma,demand,cost,feasible,within_budget\n");
    for t in &res.trace {
        let cost = t.cost.map_or(String::new(), |c| c.to_string());
        s.push_str(&format!("  {},{},{},{},{}\n", t.sigma, t.demand, cost, t.cost.is_some(), t.within_budget));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::DEFAULT_TOL;
    use crate::grid::{bundled, GridCase};

    fn ace(tie: f64, b: f64, df: f64) -> f64 {
        compute_ace(&AceInput { tie_flow_change: tie, frequency_bias: b, frequency_deviation: df }).unwrap()
    }

    /// One SG with cost P² feeding a single load.
    pub(crate) fn toy() -> GridCase {
        GridCase::from_json(
            r#"{
 "system": {"base_power": 100.0, "nominal_freq": 60.0,
  "sg_cost": {"c0": 0.0, "c1": 0.0, "c2": 1.0}, "ibr_cost": {"c0": 0.0, "c1": 0.0, "c2": 0.0}},
 "buses": [1, 2],
 "lines": [{"id": 1, "from_bus": 1, "to_bus": 2, "reactance": 0.1, "flow_min": -100.0, "flow_max": 100.0}],
 "sgs": [{"id": "G1", "bus": 1, "inertia": 5.0, "damping": 1.0, "transient_reactance": 0.3,
   "p_min": 0.0, "p_max": 100.0, "ramp_up": 100.0, "ramp_down": 100.0,
   "reserve_price_up": 0.0, "reserve_price_down": 0.0, "prev_output": 2.0}],
 "loads": [{"bus": 2, "p": 2.0}],
 "requirements": {"imbalance_up": 0.0, "imbalance_down": 0.0, "inertia": 0.0, "damping": 0.0}
}"#,
        )
        .unwrap()
    }

    #[test]
    fn ace_arithmetic() {
        assert_eq!(ace(0.0, -1.0, -0.2), -2.0);
        assert_eq!(ace(0.5, -1.0, 0.0), 0.5);
        assert!((ace(0.0, -0.05, -0.3) + 0.15).abs() < 1e-15);
        // Under-frequency lowers ACE.
        assert!(ace(0.3, -0.05, -0.1) < ace(0.3, -0.05, 0.0));
    }

    #[test]
    fn ace_rejects_nonnegative_bias() {
        for b in [0.0, 0.1] {
            let r = compute_ace(&AceInput { tie_flow_change: 0.0, frequency_bias: b, frequency_deviation: 0.1 });
            assert!(matches!(r, Err(IgdtError::BiasSign(_))));
        }
    }

    #[test]
    fn interrupted_load() {
        assert_eq!(estimate_interrupted_load(10.0, 0.0).unwrap(), 10.0);
        assert_eq!(estimate_interrupted_load(10.0, -2.0).unwrap(), 8.0);
        assert!(estimate_interrupted_load(1.0, -1.0).is_err());
    }

    #[test]
    fn worst_case_is_upper_end() {
        assert_eq!(worst_case_demand(10.0, 0.0), 10.0);
        assert!((worst_case_demand(10.0, 0.2) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn toy_matches_closed_form() {
        let case = toy();
        let input = RobustInput { predicted_load: 2.0, collapse_probability: 0.0, critical_cost: 9.0, sigma_cap: 2.0 };
        let r = solve_robust_vis(&case, &input, DEFAULT_SIGMA_TOL, DEFAULT_TOL).unwrap();
        // 4 (1 + σ)² = 9.
        assert!((r.sigma_star - 0.5).abs() < 1e-4, "{}", r.sigma_star);
        assert!(r.binding);
        assert!(!r.feasibility_capped);
        assert!(r.worst_case_cost <= r.budget);
        let above = worst_case_demand(2.0, r.sigma_star + 2.0 * DEFAULT_SIGMA_TOL);
        assert!(above * above > r.budget);
    }

    #[test]
    fn budget_at_nominal_gives_zero() {
        let case = toy();
        let input = RobustInput { predicted_load: 2.0, collapse_probability: 0.0, critical_cost: 4.0, sigma_cap: 2.0 };
        let r = solve_robust_vis(&case, &input, DEFAULT_SIGMA_TOL, DEFAULT_TOL).unwrap();
        assert!(r.sigma_star < 1e-4);
    }

    #[test]
    fn budget_below_nominal_reports_deficit() {
        let case = toy();
        let input = RobustInput { predicted_load: 2.0, collapse_probability: 0.0, critical_cost: 3.0, sigma_cap: 2.0 };
        match solve_robust_vis(&case, &input, DEFAULT_SIGMA_TOL, DEFAULT_TOL) {
            Err(IgdtError::BudgetBelowNominal { deficit, .. }) => assert!((deficit - 1.0).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generous_budget_reaches_cap() {
        let case = toy();
        let input = RobustInput { predicted_load: 2.0, collapse_probability: 0.5, critical_cost: 100.0, sigma_cap: 1.0 };
        let r = solve_robust_vis(&case, &input, DEFAULT_SIGMA_TOL, DEFAULT_TOL).unwrap();
        assert_eq!(r.sigma_star, 1.0);
        assert!(!r.binding);
    }

    #[test]
    fn case39_feasibility_caps_sigma() {
        let case = bundled("case39").unwrap();
        let d = case.total_demand();
        let nominal = solve_vis(&case, &DispatchInput::nominal(&case), DEFAULT_TOL).unwrap().total_cost;
        let input = RobustInput { predicted_load: d, collapse_probability: 1.0, critical_cost: 10.0 * nominal, sigma_cap: 2.0 };
        let r = solve_robust_vis(&case, &input, 1e-4, DEFAULT_TOL).unwrap();
        assert!(r.feasibility_capped);
        assert!(r.sigma_star > 0.0 && r.sigma_star < 2.0);
        assert!(solve_vis(&case, &DispatchInput::at_demand(&case, worst_case_demand(d, r.sigma_star + 2e-4)), DEFAULT_TOL).is_err());
    }

    #[test]
    fn sigma_nondecreasing_in_theta_and_budget() {
        let case = bundled("case39").unwrap();
        let d = case.total_demand();
        let nominal = solve_vis(&case, &DispatchInput::nominal(&case), DEFAULT_TOL).unwrap().total_cost;
        let run = |theta: f64, cc: f64| {
            let input = RobustInput { predicted_load: d, collapse_probability: theta, critical_cost: cc, sigma_cap: 2.0 };
            solve_robust_vis(&case, &input, 1e-4, DEFAULT_TOL).unwrap().sigma_star
        };
        let by_theta: Vec<f64> = [0.0, 0.05, 0.1, 0.2].iter().map(|&t| run(t, nominal)).collect();
        assert!(by_theta.windows(2).all(|w| w[1] >= w[0]), "{by_theta:?}");
        let by_cc: Vec<f64> = [1.0, 1.01, 1.03].iter().map(|&k| run(0.0, k * nominal)).collect();
        assert!(by_cc.windows(2).all(|w| w[1] >= w[0]), "{by_cc:?}");
    }

    #[test]
    fn upper_end_dominates_sampled_set() {
        use rand::{Rng, SeedableRng};
        let case = bundled("case9ish").unwrap();
        let d = case.total_demand();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cost = |p: f64| solve_vis(&case, &DispatchInput::at_demand(&case, p), DEFAULT_TOL).map(|s| s.total_cost);
        for _ in 0..20 {
            let p_hat = d * rng.gen_range(0.8..1.0);
            let sigma = rng.gen_range(0.0..0.1);
            let Ok(top) = cost(worst_case_demand(p_hat, sigma)) else { continue };
            for _ in 0..5 {
                let p = p_hat * (1.0 + rng.gen_range(-sigma..=sigma));
                assert!(cost(p).unwrap() <= top + 1e-9);
            }
        }
    }
}
