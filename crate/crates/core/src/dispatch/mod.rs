//! Virtual-inertia economic dispatch for a single real-time interval.
//!
//! Decision variables, in order: `(P, R_up, R_down)` per SG, `(P, M, D)` per
//! IBR, `(P_up, P_down)` per EV fleet.

pub mod qp;

pub use qp::{ConstraintRow, QpProblem, QpResult};

use crate::grid::{compute_gsf, GridCase, GridError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-8;
/// Constraint tolerance of [`check_feasibility`].
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("infeasible by inspection: {0}")]
    InfeasibleByInspection(String),
    #[error("infeasible: no point satisfies `{constraint}` together with the constraints already active")]
    Infeasible { constraint: String },
    #[error("unbounded objective")]
    Unbounded,
    #[error("inconsistent problem dimensions")]
    Dimensions,
    #[error("negative curvature on {0}")]
    NonConvex(String),
    #[error("solver stalled with KKT residual {residual:e}")]
    NotConverged { residual: f64 },
    #[error("input does not match case: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Demand-side data of one dispatch interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchInput {
    /// P_d, pu.
    pub demand: f64,
    pub imbalance_up: f64,
    pub imbalance_down: f64,
    /// M_req, pu·s.
    pub inertia_req: f64,
    /// D_req, pu.
    pub damping_req: f64,
    /// Demand per bus position, summing to `demand`.
    pub bus_demand: Vec<f64>,
    /// P_{g,t-1} per SG.
    pub prev_output: Vec<f64>,
}

impl DispatchInput {
    /// Interval data at the case's own demand.
    pub fn nominal(case: &GridCase) -> Self {
        Self::at_demand(case, case.total_demand())
    }

    /// Interval data with the case load profile scaled to `demand`.
    /// Inertia and damping requirements follow the demand when the case asks
    /// for it.
    pub fn at_demand(case: &GridCase, demand: f64) -> Self {
        let base = case.total_demand();
        let scale = if base > 0.0 { demand / base } else { 1.0 };
        let req = &case.requirements;
        let req_scale = if req.scale_with_demand { scale } else { 1.0 };
        let mut bus_demand = case.bus_demand();
        if base > 0.0 {
            bus_demand.iter_mut().for_each(|d| *d *= scale);
        } else if demand > 0.0 {
            let s = case.bus_index(case.slack_bus());
            bus_demand[s] = demand;
        }
        DispatchInput {
            demand,
            imbalance_up: req.imbalance_up,
            imbalance_down: req.imbalance_down,
            inertia_req: req.inertia * req_scale,
            damping_req: req.damping * req_scale,
            bus_demand,
            prev_output: case.sgs.iter().map(|g| g.prev_output).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgDispatch {
    pub p: f64,
    pub reserve_up: f64,
    pub reserve_down: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbrDispatch {
    pub p: f64,
    /// Virtual inertia M, pu·s.
    pub inertia: f64,
    /// Virtual damping D, pu.
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvDispatch {
    pub reg_up: f64,
    pub reg_down: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub sgs: Vec<SgDispatch>,
    pub ibrs: Vec<IbrDispatch>,
    pub evs: Vec<EvDispatch>,
    /// $.
    pub total_cost: f64,
    pub kkt_residual: f64,
}

impl DispatchSolution {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.sgs.len() + 3 * self.ibrs.len() + 2 * self.evs.len());
        for g in &self.sgs {
            x.extend([g.p, g.reserve_up, g.reserve_down]);
        }
        for r in &self.ibrs {
            x.extend([r.p, r.inertia, r.damping]);
        }
        for e in &self.evs {
            x.extend([e.reg_up, e.reg_down]);
        }
        x
    }

    /// Inverse of [`to_vector`](Self::to_vector); cost fields are left at 0.
    pub fn from_vector(case: &GridCase, x: &[f64]) -> Self {
        let (ns, ni) = (case.sgs.len(), case.ibrs.len());
        let sgs = (0..ns)
            .map(|g| SgDispatch { p: x[3 * g], reserve_up: x[3 * g + 1], reserve_down: x[3 * g + 2] })
            .collect();
        let b = 3 * ns;
        let ibrs = (0..ni)
            .map(|i| IbrDispatch { p: x[b + 3 * i], inertia: x[b + 3 * i + 1], damping: x[b + 3 * i + 2] })
            .collect();
        let b = 3 * ns + 3 * ni;
        let evs = (0..case.evs.len())
            .map(|e| EvDispatch { reg_up: x[b + 2 * e], reg_down: x[b + 2 * e + 1] })
            .collect();
        DispatchSolution { sgs, ibrs, evs, total_cost: 0.0, kkt_residual: 0.0 }
    }

    pub fn total_inertia(&self) -> f64 {
        self.ibrs.iter().map(|r| r.inertia).sum()
    }

    pub fn total_damping(&self) -> f64 {
        self.ibrs.iter().map(|r| r.damping).sum()
    }
}

pub fn n_vars(case: &GridCase) -> usize {
    3 * case.sgs.len() + 3 * case.ibrs.len() + 2 * case.evs.len()
}

pub(crate) fn sg_name(case: &GridCase, g: usize) -> String {
    let id = &case.sgs[g].id;
    if id.is_empty() { format!("G{g}") } else { id.clone() }
}

pub(crate) fn ibr_name(case: &GridCase, i: usize) -> String {
    let id = &case.ibrs[i].id;
    if id.is_empty() { format!("I{i}") } else { id.clone() }
}

pub(crate) fn ev_name(case: &GridCase, e: usize) -> String {
    let id = &case.evs[e].id;
    if id.is_empty() { format!("EV{e}") } else { id.clone() }
}

fn check_input(case: &GridCase, input: &DispatchInput) -> Result<(), DispatchError> {
    if input.bus_demand.len() != case.n_buses() {
        return Err(DispatchError::Mismatch(format!(
            "bus_demand has {} entries, case has {} buses",
            input.bus_demand.len(),
            case.n_buses()
        )));
    }
    if input.prev_output.len() != case.sgs.len() {
        return Err(DispatchError::Mismatch(format!(
            "prev_output has {} entries, case has {} SGs",
            input.prev_output.len(),
            case.sgs.len()
        )));
    }
    for (name, v) in [
        ("demand", input.demand),
        ("imbalance_up", input.imbalance_up),
        ("imbalance_down", input.imbalance_down),
        ("inertia_req", input.inertia_req),
        ("damping_req", input.damping_req),
    ] {
        if !(v >= 0.0) {
            return Err(DispatchError::Mismatch(format!("{name} must be >= 0, got {v}")));
        }
    }
    Ok(())
}

/// Cheap necessary conditions, so that obviously infeasible inputs fail with
/// a readable reason instead of a solver certificate.
fn inspect(case: &GridCase, input: &DispatchInput) -> Result<(), DispatchError> {
    let fail = |m: String| Err(DispatchError::InfeasibleByInspection(m));
    let mut p_lo = 0.0;
    let mut p_hi = 0.0;
    let mut up_room = 0.0;
    let mut down_room = 0.0;
    for (g, sg) in case.sgs.iter().enumerate() {
        let prev = input.prev_output[g];
        let lo = sg.p_min.max(prev - sg.ramp_down);
        let hi = sg.p_max.min(prev + sg.ramp_up);
        if lo > hi + 1e-12 {
            return fail(format!(
                "{}: ramp window [{}, {}] misses capacity range [{}, {}]",
                sg_name(case, g),
                prev - sg.ramp_down,
                prev + sg.ramp_up,
                sg.p_min,
                sg.p_max
            ));
        }
        p_lo += lo;
        p_hi += hi;
        up_room += sg.p_max - sg.p_min;
        down_room += sg.p_max - sg.p_min;
    }
    p_hi += case.ibrs.iter().map(|r| r.p_max).sum::<f64>();
    if p_hi < input.demand - 1e-12 {
        return fail(format!("demand {} exceeds available generation {}", input.demand, p_hi));
    }
    if p_lo > input.demand + 1e-12 {
        return fail(format!("minimum SG output {} exceeds demand {}", p_lo, input.demand));
    }
    up_room += case.evs.iter().map(|e| e.reg_up_max).sum::<f64>();
    down_room += case.evs.iter().map(|e| e.reg_down_max).sum::<f64>();
    if input.imbalance_up > up_room + 1e-12 {
        return fail(format!("up imbalance {} exceeds reserve headroom {}", input.imbalance_up, up_room));
    }
    if input.imbalance_down > down_room + 1e-12 {
        return fail(format!("down imbalance {} exceeds reserve headroom {}", input.imbalance_down, down_room));
    }
    let m_max: f64 = case.ibrs.iter().map(|r| r.inertia_max).sum();
    if input.inertia_req > m_max + 1e-12 {
        return fail(format!("inertia requirement {} exceeds IBR capacity {}", input.inertia_req, m_max));
    }
    let d_max: f64 = case.ibrs.iter().map(|r| r.damping_max).sum();
    if input.damping_req > d_max + 1e-12 {
        return fail(format!("damping requirement {} exceeds IBR capacity {}", input.damping_req, d_max));
    }
    Ok(())
}

/// Assembles the dispatch QP.
///
/// Line flows use the DC net injection at every bus: scheduled generation
/// located there minus the bus demand of `input`.
pub fn build_vis_problem(case: &GridCase, input: &DispatchInput) -> Result<QpProblem, DispatchError> {
    check_input(case, input)?;
    inspect(case, input)?;
    let (ns, ni, ne) = (case.sgs.len(), case.ibrs.len(), case.evs.len());
    let n = n_vars(case);
    let sg = |g: usize, k: usize| 3 * g + k;
    let ibr = |i: usize, k: usize| 3 * ns + 3 * i + k;
    let ev = |e: usize, k: usize| 3 * ns + 3 * ni + 2 * e + k;

    let mut names = vec![String::new(); n];
    let mut curvature = vec![0.0; n];
    let mut linear = vec![0.0; n];
    let mut constant = 0.0;
    let mut upper = vec![f64::INFINITY; n];
    for g in 0..ns {
        let nm = sg_name(case, g);
        names[sg(g, 0)] = format!("P[{nm}]");
        names[sg(g, 1)] = format!("RU[{nm}]");
        names[sg(g, 2)] = format!("RD[{nm}]");
        let c = case.sg_cost(g);
        curvature[sg(g, 0)] = c.c2;
        linear[sg(g, 0)] = c.c1;
        constant += c.c0;
        linear[sg(g, 1)] = case.sgs[g].reserve_price_up;
        linear[sg(g, 2)] = case.sgs[g].reserve_price_down;
    }
    for i in 0..ni {
        let nm = ibr_name(case, i);
        names[ibr(i, 0)] = format!("P[{nm}]");
        names[ibr(i, 1)] = format!("M[{nm}]");
        names[ibr(i, 2)] = format!("D[{nm}]");
        let c = case.ibr_cost(i);
        curvature[ibr(i, 0)] = c.c2;
        linear[ibr(i, 0)] = c.c1;
        constant += c.c0;
        linear[ibr(i, 1)] = case.ibrs[i].inertia_price;
        linear[ibr(i, 2)] = case.ibrs[i].damping_price;
        upper[ibr(i, 0)] = case.ibrs[i].p_max;
    }
    for e in 0..ne {
        let nm = ev_name(case, e);
        names[ev(e, 0)] = format!("PU[{nm}]");
        names[ev(e, 1)] = format!("PD[{nm}]");
        linear[ev(e, 0)] = case.evs[e].reg_up_price;
        linear[ev(e, 1)] = case.evs[e].reg_down_price;
    }

    let row = |entries: &[(usize, f64)], rhs: f64, label: String| {
        let mut coeffs = vec![0.0; n];
        for &(j, v) in entries {
            coeffs[j] += v;
        }
        ConstraintRow { coeffs, rhs, label }
    };

    let mut eq = Vec::with_capacity(5);
    let up: Vec<(usize, f64)> = (0..ns).map(|g| (sg(g, 1), 1.0)).chain((0..ne).map(|e| (ev(e, 0), 1.0))).collect();
    eq.push(row(&up, input.imbalance_up, "reg_up_balance".into()));
    let down: Vec<(usize, f64)> = (0..ns).map(|g| (sg(g, 2), 1.0)).chain((0..ne).map(|e| (ev(e, 1), 1.0))).collect();
    eq.push(row(&down, input.imbalance_down, "reg_down_balance".into()));
    let pb: Vec<(usize, f64)> = (0..ns).map(|g| (sg(g, 0), 1.0)).chain((0..ni).map(|i| (ibr(i, 0), 1.0))).collect();
    eq.push(row(&pb, input.demand, "power_balance".into()));
    let m: Vec<(usize, f64)> = (0..ni).map(|i| (ibr(i, 1), 1.0)).collect();
    eq.push(row(&m, input.inertia_req, "inertia_balance".into()));
    let d: Vec<(usize, f64)> = (0..ni).map(|i| (ibr(i, 2), 1.0)).collect();
    eq.push(row(&d, input.damping_req, "damping_balance".into()));

    let mut ineq = Vec::new();
    for (g, p) in case.sgs.iter().enumerate() {
        let nm = sg_name(case, g);
        let prev = input.prev_output[g];
        ineq.push(row(&[(sg(g, 0), 1.0), (sg(g, 1), 1.0)], p.p_max, format!("capacity[{nm}]")));
        ineq.push(row(&[(sg(g, 0), -1.0), (sg(g, 2), 1.0)], -p.p_min, format!("down_reserve_floor[{nm}]")));
        ineq.push(row(&[(sg(g, 0), 1.0)], prev + p.ramp_up, format!("ramp_up[{nm}]")));
        ineq.push(row(&[(sg(g, 0), -1.0)], p.ramp_down - prev, format!("ramp_down[{nm}]")));
    }
    let gsf = compute_gsf(case)?;
    let pos = case.bus_positions();
    for (k, line) in case.lines.iter().enumerate() {
        let mut entries = Vec::new();
        for (g, p) in case.sgs.iter().enumerate() {
            entries.push((sg(g, 0), gsf.get(k, pos[&p.bus])));
        }
        for (i, r) in case.ibrs.iter().enumerate() {
            entries.push((ibr(i, 0), gsf.get(k, pos[&r.bus])));
        }
        let load_flow: f64 = (0..case.n_buses()).map(|b| gsf.get(k, b) * input.bus_demand[b]).sum();
        let neg: Vec<(usize, f64)> = entries.iter().map(|&(j, v)| (j, -v)).collect();
        ineq.push(row(&entries, line.flow_max + load_flow, format!("flow_max[line {}]", line.id)));
        ineq.push(row(&neg, -line.flow_min - load_flow, format!("flow_min[line {}]", line.id)));
    }
    for (e, f) in case.evs.iter().enumerate() {
        let nm = ev_name(case, e);
        ineq.push(row(&[(ev(e, 0), 1.0)], f.reg_up_max, format!("ev_up_cap[{nm}]")));
        ineq.push(row(&[(ev(e, 1), 1.0)], f.reg_down_max, format!("ev_down_cap[{nm}]")));
    }
    for (i, r) in case.ibrs.iter().enumerate() {
        let nm = ibr_name(case, i);
        ineq.push(row(&[(ibr(i, 1), 1.0)], r.inertia_max, format!("inertia_cap[{nm}]")));
        ineq.push(row(&[(ibr(i, 2), 1.0)], r.damping_max, format!("damping_cap[{nm}]")));
    }

    Ok(QpProblem {
        names,
        curvature,
        linear,
        constant,
        equalities: eq,
        inequalities: ineq,
        lower: vec![0.0; n],
        upper,
    })
}

/// Solves an assembled dispatch problem. `case` supplies the variable layout
/// and the cost recomputation.
pub fn solve_qp(case: &GridCase, problem: &QpProblem, tol: f64) -> Result<DispatchSolution, DispatchError> {
    if problem.n_vars() != n_vars(case) {
        return Err(DispatchError::Dimensions);
    }
    let res = qp::solve(problem, tol)?;
    let mut sol = DispatchSolution::from_vector(case, &res.x);
    sol.kkt_residual = res.kkt_residual;
    sol.total_cost = evaluate_cost(&sol, case);
    Ok(sol)
}

/// Builds and solves the dispatch for `input`.
pub fn solve_vis(case: &GridCase, input: &DispatchInput, tol: f64) -> Result<DispatchSolution, DispatchError> {
    let problem = build_vis_problem(case, input)?;
    solve_qp(case, &problem, tol)
}

/// Total cost of a solution, recomputed from the case coefficients.
pub fn evaluate_cost(sol: &DispatchSolution, case: &GridCase) -> f64 {
    let mut cost = 0.0;
    for (g, d) in sol.sgs.iter().enumerate() {
        let p = &case.sgs[g];
        cost += case.sg_cost(g).eval(d.p) + p.reserve_price_up * d.reserve_up + p.reserve_price_down * d.reserve_down;
    }
    for (i, d) in sol.ibrs.iter().enumerate() {
        let r = &case.ibrs[i];
        cost += case.ibr_cost(i).eval(d.p) + r.inertia_price * d.inertia + r.damping_price * d.damping;
    }
    for (e, d) in sol.evs.iter().enumerate() {
        let f = &case.evs[e];
        cost += f.reg_up_price * d.reg_up + f.reg_down_price * d.reg_down;
    }
    cost
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    /// Amount by which the constraint is exceeded (absolute gap for balances).
    pub amount: f64,
}

/// Every constraint violated by more than [`FEAS_TOL`].
pub fn check_feasibility(sol: &DispatchSolution, input: &DispatchInput, case: &GridCase) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |name: String, amount: f64| {
        if amount > FEAS_TOL {
            out.push(Violation { constraint: name, amount });
        }
    };
    if sol.sgs.len() != case.sgs.len() || sol.ibrs.len() != case.ibrs.len() || sol.evs.len() != case.evs.len() {
        push("dimensions".into(), f64::INFINITY);
        return out;
    }
    let sum = |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>();
    let ru = sum(&mut sol.sgs.iter().map(|g| g.reserve_up)) + sum(&mut sol.evs.iter().map(|e| e.reg_up));
    push("reg_up_balance".into(), (ru - input.imbalance_up).abs());
    let rd = sum(&mut sol.sgs.iter().map(|g| g.reserve_down)) + sum(&mut sol.evs.iter().map(|e| e.reg_down));
    push("reg_down_balance".into(), (rd - input.imbalance_down).abs());
    let p = sum(&mut sol.sgs.iter().map(|g| g.p)) + sum(&mut sol.ibrs.iter().map(|r| r.p));
    push("power_balance".into(), (p - input.demand).abs());
    push("inertia_balance".into(), (sol.total_inertia() - input.inertia_req).abs());
    push("damping_balance".into(), (sol.total_damping() - input.damping_req).abs());

    for (g, d) in sol.sgs.iter().enumerate() {
        let par = &case.sgs[g];
        let nm = sg_name(case, g);
        let prev = input.prev_output[g];
        push(format!("capacity[{nm}]"), d.p + d.reserve_up - par.p_max);
        push(format!("down_reserve_floor[{nm}]"), par.p_min - (d.p - d.reserve_down));
        push(format!("ramp_up[{nm}]"), d.p - prev - par.ramp_up);
        push(format!("ramp_down[{nm}]"), prev - d.p - par.ramp_down);
    }
    if let Ok(gsf) = compute_gsf(case) {
        let pos = case.bus_positions();
        let mut inj: Vec<f64> = input.bus_demand.iter().map(|d| -d).collect();
        for (g, d) in sol.sgs.iter().enumerate() {
            inj[pos[&case.sgs[g].bus]] += d.p;
        }
        for (i, d) in sol.ibrs.iter().enumerate() {
            inj[pos[&case.ibrs[i].bus]] += d.p;
        }
        for (line, f) in case.lines.iter().zip(gsf.flows(&inj)) {
            push(format!("flow_max[line {}]", line.id), f - line.flow_max);
            push(format!("flow_min[line {}]", line.id), line.flow_min - f);
        }
    }
    for (e, d) in sol.evs.iter().enumerate() {
        let nm = ev_name(case, e);
        push(format!("ev_up_cap[{nm}]"), d.reg_up - case.evs[e].reg_up_max);
        push(format!("ev_down_cap[{nm}]"), d.reg_down - case.evs[e].reg_down_max);
    }
    for (i, d) in sol.ibrs.iter().enumerate() {
        let nm = ibr_name(case, i);
        push(format!("inertia_cap[{nm}]"), d.inertia - case.ibrs[i].inertia_max);
        push(format!("damping_cap[{nm}]"), d.damping - case.ibrs[i].damping_max);
        push(format!("upper bound of P[{nm}]"), d.p - case.ibrs[i].p_max);
    }
    for (j, v) in sol.to_vector().iter().enumerate() {
        if -v > FEAS_TOL {
            let names = variable_names(case);
            push(format!("lower bound of {}", names[j]), -v);
        }
    }
    out
}

/// Variable names in vector order, matching [`QpProblem::names`].
pub fn variable_names(case: &GridCase) -> Vec<String> {
    let mut v = Vec::with_capacity(n_vars(case));
    for g in 0..case.sgs.len() {
        let nm = sg_name(case, g);
        v.extend([format!("P[{nm}]"), format!("RU[{nm}]"), format!("RD[{nm}]")]);
    }
    for i in 0..case.ibrs.len() {
        let nm = ibr_name(case, i);
        v.extend([format!("P[{nm}]"), format!("M[{nm}]"), format!("D[{nm}]")]);
    }
    for e in 0..case.evs.len() {
        let nm = ev_name(case, e);
        v.extend([format!("PU[{nm}]"), format!("PD[{nm}]")]);
    }
    v
}

#[cfg(test)]
mod tests;
