use super::*;
use crate::grid::{bundled, QuadCost};

fn one_bus(n_sg: usize, cost: QuadCost, demand: f64) -> GridCase {
    let sgs: Vec<String> = (0..n_sg)
        .map(|g| {
            format!(
                r#"{{"id":"G{g}","bus":1,"inertia":3,"damping":0,"transient_reactance":0.2,"p_min":0,"p_max":10,
                   "ramp_up":10,"ramp_down":10,"reserve_price_up":0,"reserve_price_down":0,"prev_output":0}}"#
            )
        })
        .collect();
    let text = format!(
        r#"{{"system": {{"base_power":100,"nominal_freq":60,"sg_cost":{{"c0":{},"c1":{},"c2":{}}},
                        "ibr_cost":{{"c0":0,"c1":0,"c2":0}}}},
            "buses":[1,2],
            "lines":[{{"id":1,"from_bus":1,"to_bus":2,"reactance":0.1,"flow_min":-99,"flow_max":99}}],
            "sgs":[{}],
            "loads":[{{"bus":1,"p":{}}}],
            "requirements":{{"imbalance_up":0,"imbalance_down":0,"inertia":0,"damping":0}}}}"#,
        cost.c0,
        cost.c1,
        cost.c2,
        sgs.join(","),
        demand
    );
    GridCase::from_json(&text).unwrap()
}

fn solve_nominal(case: &GridCase) -> (DispatchInput, DispatchSolution) {
    let input = DispatchInput::nominal(case);
    let sol = solve_vis(case, &input, DEFAULT_TOL).unwrap();
    (input, sol)
}

#[test]
fn variable_count_two_sg_one_ibr_one_ev() {
    let mut case = bundled("case9ish").unwrap();
    case.sgs.truncate(2);
    case.validate().unwrap();
    assert_eq!(case.ibrs.len(), 1);
    assert_eq!(case.evs.len(), 1);
    let p = build_vis_problem(&case, &DispatchInput::nominal(&case)).unwrap();
    assert_eq!(p.n_vars(), 11);
}

#[test]
fn zero_requirements_force_zero_virtual_services() {
    let mut case = bundled("case9ish").unwrap();
    case.requirements.inertia = 0.0;
    case.requirements.damping = 0.0;
    let (_, sol) = solve_nominal(&case);
    for r in &sol.ibrs {
        assert!(r.inertia.abs() < 1e-9 && r.damping.abs() < 1e-9);
    }
}

#[test]
fn case39_constraint_counts() {
    let case = bundled("case39").unwrap();
    let p = build_vis_problem(&case, &DispatchInput::nominal(&case)).unwrap();
    // Counted from the case file itself.
    let text = include_str!("../../data/cases/case39.json");
    let raw: serde_json::Value = serde_json::from_str(text).unwrap();
    let len = |k: &str| raw[k].as_array().map_or(0, |a| a.len());
    assert_eq!(p.equalities.len(), 5);
    assert_eq!(p.inequalities.len(), 4 * len("sgs") + 2 * len("lines") + 2 * len("evs") + 2 * len("ibrs"));
    assert_eq!(p.n_vars(), 3 * len("sgs") + 3 * len("ibrs") + 2 * len("evs"));
    assert!(p.lower.iter().all(|l| *l == 0.0));
}

#[test]
fn single_quadratic_unit() {
    let case = one_bus(1, QuadCost { c0: 0.5, c1: 0.0, c2: 1.0 }, 2.0);
    let (_, sol) = solve_nominal(&case);
    assert!((sol.sgs[0].p - 2.0).abs() < 1e-9);
    assert!((sol.total_cost - 4.5).abs() < 1e-9);
}

#[test]
fn equal_units_split_evenly() {
    let case = one_bus(2, QuadCost { c0: 0.0, c1: 1.0, c2: 1.0 }, 4.0);
    let (_, sol) = solve_nominal(&case);
    assert!((sol.sgs[0].p - 2.0).abs() < 1e-9 && (sol.sgs[1].p - 2.0).abs() < 1e-9);
}

#[test]
fn cost_of_zero_solution_is_fixed_costs() {
    let case = bundled("case9ish").unwrap();
    let sol = DispatchSolution::from_vector(&case, &vec![0.0; n_vars(&case)]);
    let fixed: f64 = (0..case.sgs.len()).map(|g| case.sg_cost(g).c0).sum::<f64>()
        + (0..case.ibrs.len()).map(|i| case.ibr_cost(i).c0).sum::<f64>();
    assert_eq!(evaluate_cost(&sol, &case), fixed);
}

#[test]
fn cost_arithmetic() {
    let case = one_bus(1, QuadCost { c0: 3.0, c1: 2.0, c2: 1.0 }, 2.0);
    let mut sol = DispatchSolution::from_vector(&case, &[0.0; 3]);
    sol.sgs[0].p = 2.0;
    assert_eq!(evaluate_cost(&sol, &case), 11.0);
}

#[test]
fn capacity_violation_amount() {
    let case = bundled("case9ish").unwrap();
    let (input, mut sol) = solve_nominal(&case);
    let pmax = case.sgs[0].p_max;
    sol.sgs[0].p = pmax + 0.1;
    sol.sgs[0].reserve_up = 0.05;
    let report = check_feasibility(&sol, &input, &case);
    let v = report.iter().find(|v| v.constraint.starts_with("capacity[")).unwrap();
    assert!((v.amount - 0.15).abs() < 1e-12, "{report:?}");
}

#[test]
fn solver_output_is_feasible() {
    for name in ["case9ish", "case39", "case_smib"] {
        let case = bundled(name).unwrap();
        let (input, sol) = solve_nominal(&case);
        let report = check_feasibility(&sol, &input, &case);
        assert!(report.is_empty(), "{name}: {report:?}");
        assert!(sol.kkt_residual <= DEFAULT_TOL, "{name}: {}", sol.kkt_residual);
    }
}

/// Violations computed straight from the assembled rows.
fn row_evaluator(p: &QpProblem, x: &[f64]) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for r in &p.equalities {
        let g = (r.dot(x) - r.rhs).abs();
        if g > FEAS_TOL {
            out.push((r.label.clone(), g));
        }
    }
    for r in &p.inequalities {
        let g = r.dot(x) - r.rhs;
        if g > FEAS_TOL {
            out.push((r.label.clone(), g));
        }
    }
    for j in 0..x.len() {
        if p.lower[j] - x[j] > FEAS_TOL {
            out.push((format!("lower bound of {}", p.names[j]), p.lower[j] - x[j]));
        }
        if x[j] - p.upper[j] > FEAS_TOL {
            out.push((format!("upper bound of {}", p.names[j]), x[j] - p.upper[j]));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn perturbed_report_matches_row_evaluator() {
    let case = bundled("case39").unwrap();
    let (input, sol) = solve_nominal(&case);
    let p = build_vis_problem(&case, &input).unwrap();
    let x: Vec<f64> = sol.to_vector().iter().map(|v| v + 1e-3).collect();
    let perturbed = DispatchSolution::from_vector(&case, &x);
    let mut report: Vec<(String, f64)> = check_feasibility(&perturbed, &input, &case)
        .into_iter()
        .map(|v| (v.constraint, v.amount))
        .collect();
    report.sort_by(|a, b| a.0.cmp(&b.0));
    let oracle = row_evaluator(&p, &x);
    assert!(!oracle.is_empty());
    assert_eq!(report.len(), oracle.len(), "{report:?}\n{oracle:?}");
    for (a, b) in report.iter().zip(&oracle) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() < 1e-9, "{a:?} vs {b:?}");
    }
}

#[test]
fn names_match_problem() {
    let case = bundled("case39").unwrap();
    let p = build_vis_problem(&case, &DispatchInput::nominal(&case)).unwrap();
    assert_eq!(p.names, variable_names(&case));
}

#[test]
fn round_trip_cost() {
    let case = bundled("case39").unwrap();
    let input = DispatchInput::nominal(&case);
    let p = build_vis_problem(&case, &input).unwrap();
    let res = qp::solve(&p, DEFAULT_TOL).unwrap();
    let sol = solve_qp(&case, &p, DEFAULT_TOL).unwrap();
    assert!((res.cost - sol.total_cost).abs() <= 1e-9 * sol.total_cost.abs());
}

#[test]
fn no_single_coordinate_improvement() {
    let case = bundled("case39").unwrap();
    let (input, sol) = solve_nominal(&case);
    let x = sol.to_vector();
    for j in 0..x.len() {
        for s in [-1e-3, 1e-3] {
            let mut y = x.clone();
            y[j] += s;
            let cand = DispatchSolution::from_vector(&case, &y);
            if check_feasibility(&cand, &input, &case).is_empty() {
                assert!(evaluate_cost(&cand, &case) >= sol.total_cost - 1e-6, "coordinate {j}");
            }
        }
    }
}

#[test]
fn cost_nondecreasing_in_demand() {
    let case = bundled("case39").unwrap();
    let base = case.total_demand();
    let mut last = f64::NEG_INFINITY;
    for k in 0..8 {
        let d = base * (0.8 + 0.04 * k as f64);
        let sol = solve_vis(&case, &DispatchInput::at_demand(&case, d), DEFAULT_TOL).unwrap();
        assert!(sol.total_cost >= last - 1e-9, "demand {d}");
        last = sol.total_cost;
    }
}

#[test]
fn linear_price_scaling() {
    let mut case = bundled("case9ish").unwrap();
    case.system.sg_cost.c2 = 0.0;
    case.system.ibr_cost.c2 = 0.0;
    case.system.sg_cost.c0 = 0.0;
    case.system.ibr_cost.c0 = 0.0;
    let (_, a) = solve_nominal(&case);
    let alpha = 3.0;
    case.system.sg_cost.c1 *= alpha;
    case.system.ibr_cost.c1 *= alpha;
    for g in &mut case.sgs {
        g.reserve_price_up *= alpha;
        g.reserve_price_down *= alpha;
    }
    for r in &mut case.ibrs {
        r.inertia_price *= alpha;
        r.damping_price *= alpha;
    }
    for e in &mut case.evs {
        e.reg_up_price *= alpha;
        e.reg_down_price *= alpha;
    }
    let (_, b) = solve_nominal(&case);
    assert!((b.total_cost - alpha * a.total_cost).abs() < 1e-7 * (1.0 + b.total_cost));
}

#[test]
fn inspection_rejects_excess_demand() {
    let case = bundled("case9ish").unwrap();
    let input = DispatchInput::at_demand(&case, 1e3);
    assert!(matches!(build_vis_problem(&case, &input), Err(DispatchError::InfeasibleByInspection(_))));
}

#[test]
fn deterministic() {
    let case = bundled("case39").unwrap();
    let (_, a) = solve_nominal(&case);
    let (_, b) = solve_nominal(&case);
    assert_eq!(a, b);
}
