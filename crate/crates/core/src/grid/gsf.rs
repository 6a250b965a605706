use super::{GridCase, GridError};
use nalgebra::DMatrix;
use std::collections::VecDeque;

/// DC generation shift factors, `lines × buses` in case order.
#[derive(Debug, Clone, PartialEq)]
pub struct GsfMatrix {
    pub values: DMatrix<f64>,
    pub slack_bus: u32,
}

impl GsfMatrix {
    pub fn get(&self, line: usize, bus: usize) -> f64 {
        self.values[(line, bus)]
    }

    /// DC flows for a per-bus injection vector.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        (0..self.values.nrows())
            .map(|k| (0..injection.len()).map(|b| self.values[(k, b)] * injection[b]).sum())
            .collect()
    }
}

/// Sensitivity of each line's DC flow to an injection at each bus withdrawn
/// at the slack bus. Out-of-service lines get a zero row.
pub fn compute_gsf(case: &GridCase) -> Result<GsfMatrix, GridError> {
    let pos = case.bus_positions();
    let n = case.n_buses();
    let slack_bus = case.slack_bus();
    let slack = pos[&slack_bus];

    let mut adj = vec![Vec::new(); n];
    let mut b = DMatrix::<f64>::zeros(n, n);
    for l in case.lines.iter().filter(|l| l.is_in_service()) {
        let (i, j) = (pos[&l.from_bus], pos[&l.to_bus]);
        let s = 1.0 / l.reactance;
        b[(i, i)] += s;
        b[(j, j)] += s;
        b[(i, j)] -= s;
        b[(j, i)] -= s;
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    seen[slack] = true;
    let mut queue = VecDeque::from([slack]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(GridError::Disconnected(case.buses[i]));
    }

    let others: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let reduced = DMatrix::from_fn(others.len(), others.len(), |i, j| b[(others[i], others[j])]);
    // Connected ⇒ the reduced Laplacian is positive definite.
    let inv = reduced
        .cholesky()
        .expect("reduced susceptance matrix of a connected network is SPD")
        .inverse();
    let mut x = DMatrix::<f64>::zeros(n, n);
    for (a, &i) in others.iter().enumerate() {
        for (c, &j) in others.iter().enumerate() {
            x[(i, j)] = inv[(a, c)];
        }
    }
    let mut values = DMatrix::<f64>::zeros(case.lines.len(), n);
    for (k, l) in case.lines.iter().enumerate() {
        if !l.is_in_service() {
            continue;
        }
        let (f, t) = (pos[&l.from_bus], pos[&l.to_bus]);
        for bus in 0..n {
            values[(k, bus)] = (x[(f, bus)] - x[(t, bus)]) / l.reactance;
        }
    }
    Ok(GsfMatrix { values, slack_bus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;
    use proptest::prelude::*;

    fn triangle() -> GridCase {
        let text = r#"{
          "system": {"base_power": 100, "nominal_freq": 60, "slack_bus": 3,
                     "sg_cost": {"c0":0,"c1":0,"c2":0}, "ibr_cost": {"c0":0,"c1":0,"c2":0}},
          "buses": [1,2,3],
          "lines": [
            {"id":1,"from_bus":1,"to_bus":2,"reactance":0.1,"flow_min":-9,"flow_max":9},
            {"id":2,"from_bus":2,"to_bus":3,"reactance":0.1,"flow_min":-9,"flow_max":9},
            {"id":3,"from_bus":1,"to_bus":3,"reactance":0.1,"flow_min":-9,"flow_max":9}],
          "sgs": [{"bus":1,"inertia":3,"damping":0,"transient_reactance":0.2,"p_min":0,"p_max":5,
                   "ramp_up":5,"ramp_down":5,"reserve_price_up":0,"reserve_price_down":0,"prev_output":0}],
          "loads": [{"bus":3,"p":1.0}],
          "requirements": {"imbalance_up":0,"imbalance_down":0,"inertia":0,"damping":0}
        }"#;
        GridCase::from_json(text).unwrap()
    }

    #[test]
    fn two_bus_unit_sensitivity() {
        let mut case = bundled("case_smib").unwrap();
        case.system.slack_bus = Some(2);
        let gsf = compute_gsf(&case).unwrap();
        assert!((gsf.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(gsf.get(0, 1), 0.0);
    }

    #[test]
    fn triangle_splits_two_thirds_one_third() {
        // Hand DC solution: injecting 1 at bus 1 with slack 3, the direct
        // path 1–3 has reactance x and the detour 1–2–3 has 2x, so flows
        // divide 2:1.
        let gsf = compute_gsf(&triangle()).unwrap();
        assert!((gsf.get(2, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((gsf.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((gsf.get(1, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn slack_column_is_zero() {
        let case = bundled("case39").unwrap();
        let gsf = compute_gsf(&case).unwrap();
        let s = case.bus_index(gsf.slack_bus);
        assert!((0..case.lines.len()).all(|k| gsf.get(k, s) == 0.0));
    }

    #[test]
    fn disconnected_network_rejected() {
        let mut case = triangle();
        case.lines[0].in_service = 0;
        case.lines[1].in_service = 0;
        assert!(matches!(compute_gsf(&case), Err(GridError::Disconnected(2))));
    }

    /// Direct DC power flow: solve B θ = P with θ_slack = 0, flow = Δθ / x.
    fn dc_flows(case: &GridCase, injection: &[f64]) -> Vec<f64> {
        let pos = case.bus_positions();
        let n = case.n_buses();
        let slack = pos[&case.slack_bus()];
        let mut b = DMatrix::<f64>::zeros(n, n);
        for l in &case.lines {
            let (i, j) = (pos[&l.from_bus], pos[&l.to_bus]);
            let s = 1.0 / l.reactance;
            b[(i, i)] += s;
            b[(j, j)] += s;
            b[(i, j)] -= s;
            b[(j, i)] -= s;
        }
        for k in 0..n {
            b[(slack, k)] = 0.0;
        }
        b[(slack, slack)] = 1.0;
        let mut p = nalgebra::DVector::from_column_slice(injection);
        p[slack] = 0.0;
        let theta = b.lu().solve(&p).unwrap();
        case.lines
            .iter()
            .map(|l| (theta[pos[&l.from_bus]] - theta[pos[&l.to_bus]]) / l.reactance)
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gsf_reproduces_dc_flows(raw in proptest::collection::vec(-5.0f64..5.0, 39)) {
            let case = bundled("case39").unwrap();
            let slack = case.bus_index(case.slack_bus());
            let mut inj = raw.clone();
            let total: f64 = inj.iter().sum::<f64>() - inj[slack];
            inj[slack] = -total;
            let gsf = compute_gsf(&case).unwrap();
            let via_gsf = gsf.flows(&inj);
            let direct = dc_flows(&case, &inj);
            for (a, b) in via_gsf.iter().zip(&direct) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
