use super::{
    Event, EventKind, FaultScenario, MachineInfo, MachineSample, SimConfig, TdsError, TrajectoryRecord,
};
use crate::dispatch::{ibr_name, sg_name, DispatchSolution};
use crate::grid::{build_admittance, kron_reduce, CMatrix, FaultLocation, GridCase};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A speed excursion beyond this many pu ends the run.
const SPEED_ABORT: f64 = 0.5;
const EQ_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachineKind {
    Sg,
    Ibr,
}

/// Dynamic parameters of every machine under one dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineSet {
    pub names: Vec<String>,
    pub kinds: Vec<MachineKind>,
    pub buses: Vec<u32>,
    /// Reactance between internal EMF and terminal bus, pu.
    pub reactance: Vec<f64>,
    /// Inertia coefficient M = 2H, s.
    pub m: Vec<f64>,
    pub d: Vec<f64>,
    /// Scheduled electrical output, pu.
    pub p_sched: Vec<f64>,
    /// Share of any load mismatch each machine picks up at equilibrium.
    pub weight: Vec<f64>,
}

impl MachineSet {
    pub fn new(case: &GridCase, dispatch: &DispatchSolution) -> Result<Self, TdsError> {
        if dispatch.sgs.len() != case.sgs.len() || dispatch.ibrs.len() != case.ibrs.len() {
            return Err(TdsError::Dispatch(format!(
                "dispatch has {} SGs / {} IBRs, case has {} / {}",
                dispatch.sgs.len(),
                dispatch.ibrs.len(),
                case.sgs.len(),
                case.ibrs.len()
            )));
        }
        let mut ms = MachineSet {
            names: vec![],
            kinds: vec![],
            buses: vec![],
            reactance: vec![],
            m: vec![],
            d: vec![],
            p_sched: vec![],
            weight: vec![],
        };
        for (g, p) in case.sgs.iter().enumerate() {
            ms.names.push(sg_name(case, g));
            ms.kinds.push(MachineKind::Sg);
            ms.buses.push(p.bus);
            ms.reactance.push(p.transient_reactance);
            ms.m.push(2.0 * p.inertia);
            ms.d.push(p.damping);
            ms.p_sched.push(dispatch.sgs[g].p);
            ms.weight.push(p.p_max);
        }
        for (i, p) in case.ibrs.iter().enumerate() {
            let m = dispatch.ibrs[i].inertia + p.inherent_inertia;
            if !(m > 0.0) {
                return Err(TdsError::Dispatch(format!("{} has no inertia to simulate", ibr_name(case, i))));
            }
            ms.names.push(ibr_name(case, i));
            ms.kinds.push(MachineKind::Ibr);
            ms.buses.push(p.bus);
            ms.reactance.push(p.coupling_reactance);
            ms.m.push(m);
            ms.d.push(dispatch.ibrs[i].damping + p.inherent_damping);
            ms.p_sched.push(dispatch.ibrs[i].p);
            ms.weight.push(p.p_max);
        }
        Ok(ms)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Kron-reduced network on the machine EMFs (plus the infinite bus, last).
#[derive(Debug, Clone)]
pub(crate) struct Net {
    pub nr: usize,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl Net {
    fn from_matrix(y: &CMatrix) -> Self {
        let nr = y.nrows();
        let mut g = vec![0.0; nr * nr];
        let mut b = vec![0.0; nr * nr];
        for i in 0..nr {
            for j in 0..nr {
                g[i * nr + j] = y[(i, j)].re;
                b[i * nr + j] = y[(i, j)].im;
            }
        }
        Net { nr, g, b }
    }

    /// Injected currents `Y E` (real, imaginary parts).
    pub fn currents(&self, er: &[f64], ei: &[f64], ir: &mut [f64], ii: &mut [f64]) {
        let nr = self.nr;
        for i in 0..nr {
            let (mut a, mut c) = (0.0, 0.0);
            let row_g = &self.g[i * nr..(i + 1) * nr];
            let row_b = &self.b[i * nr..(i + 1) * nr];
            for j in 0..nr {
                a += row_g[j] * er[j] - row_b[j] * ei[j];
                c += row_g[j] * ei[j] + row_b[j] * er[j];
            }
            ir[i] = a;
            ii[i] = c;
        }
    }

    /// Electrical power of the first `n` nodes and, optionally, the
    /// sensitivity matrix ∂P/∂δ over all `nr` nodes.
    pub fn power(&self, e: &[f64], delta: &[f64], n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let nr = self.nr;
        let mut p = vec![0.0; n];
        let mut k = DMatrix::zeros(nr, nr);
        for m in 0..n {
            let mut diag = 0.0;
            for j in 0..nr {
                let (gg, bb) = (self.g[m * nr + j], self.b[m * nr + j]);
                if j == m {
                    p[m] += e[m] * e[m] * gg;
                    continue;
                }
                let dd = delta[m] - delta[j];
                let (s, c) = dd.sin_cos();
                let ee = e[m] * e[j];
                p[m] += ee * (gg * c + bb * s);
                let kj = ee * (gg * s - bb * c);
                k[(m, j)] = kj;
                diag -= kj;
            }
            k[(m, m)] = diag;
        }
        (p, k)
    }
}

/// Full nodal matrix over buses followed by machine internal nodes.
fn extended_admittance(
    case: &GridCase,
    ms: &MachineSet,
    load_g: &[f64],
    status: &[u8],
    fault: Option<FaultLocation>,
    tripped: &[bool],
) -> Result<(CMatrix, Vec<usize>), TdsError> {
    let nb = case.n_buses();
    let n = ms.len();
    let y_net = build_admittance(case, status, fault)?;
    let mut y = CMatrix::zeros(nb + n, nb + n);
    y.view_mut((0, 0), (nb, nb)).copy_from(&y_net);
    for b in 0..nb {
        y[(b, b)] += Complex64::new(load_g[b], 0.0);
    }
    let pos = case.bus_positions();
    for m in 0..n {
        if tripped[m] {
            continue;
        }
        let adm = Complex64::new(0.0, -1.0 / ms.reactance[m]);
        let (a, b) = (nb + m, pos[&ms.buses[m]]);
        y[(a, a)] += adm;
        y[(b, b)] += adm;
        y[(a, b)] -= adm;
        y[(b, a)] -= adm;
    }
    let mut retained: Vec<usize> = (nb..nb + n).collect();
    if let Some(ib) = case.system.infinite_bus {
        retained.push(pos[&ib]);
    }
    Ok((y, retained))
}

fn reduced(
    case: &GridCase,
    ms: &MachineSet,
    load_g: &[f64],
    status: &[u8],
    fault: Option<FaultLocation>,
    tripped: &[bool],
) -> Result<Net, TdsError> {
    let (y, retained) = extended_admittance(case, ms, load_g, status, fault, tripped)?;
    Ok(Net::from_matrix(&kron_reduce(&y, &retained)?))
}

/// Voltages of every node of the extended network given the retained EMFs.
fn node_voltages(y: &CMatrix, retained: &[usize], e: &[Complex64]) -> Vec<Complex64> {
    let n = y.nrows();
    let mut keep = vec![false; n];
    for &r in retained {
        keep[r] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    let y_nn = CMatrix::from_fn(interior.len(), interior.len(), |i, j| y[(interior[i], interior[j])]);
    let rhs = DVector::from_fn(interior.len(), |i, _| {
        -retained.iter().zip(e).map(|(&r, ev)| y[(interior[i], r)] * ev).sum::<Complex64>()
    });
    let v_int = y_nn.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(interior.len()));
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for (&r, ev) in retained.iter().zip(e) {
        v[r] = *ev;
    }
    for (k, &i) in interior.iter().enumerate() {
        v[i] = v_int[k];
    }
    v
}

/// Pre-fault operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// EMF magnitudes, pu.
    pub e_mag: Vec<f64>,
    /// Rotor angles, rad.
    pub delta: Vec<f64>,
    /// Mechanical power, pu.
    pub pm: Vec<f64>,
    /// Load conductance per bus position, pu.
    pub load_g: Vec<f64>,
    /// Mismatch per unit of weight picked up by the machines.
    pub slack_share: f64,
    pub residual: f64,
}

fn solve_angles(
    net: &Net,
    ms: &MachineSet,
    e: &[f64],
    has_inf: bool,
    start: &[f64],
) -> Result<(Vec<f64>, f64, f64), TdsError> {
    let n = ms.len();
    let nr = net.nr;
    let w_sum: f64 = ms.weight.iter().sum();
    if !has_inf && !(w_sum > 0.0) {
        return Err(TdsError::NoEquilibrium("no machine can take up load mismatch".into()));
    }
    let mut delta = start.to_vec();
    delta.resize(nr, 0.0);
    if has_inf {
        delta[nr - 1] = 0.0;
    }
    let mut lambda = 0.0;
    let residual = |delta: &[f64], lambda: f64| -> (Vec<f64>, DMatrix<f64>) {
        let (p, k) = net.power(e, delta, n);
        let r = (0..n).map(|m| p[m] - ms.p_sched[m] - lambda * ms.weight[m]).collect();
        (r, k)
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut r, mut k) = residual(&delta, lambda);
    for _ in 0..100 {
        if norm(&r) < 1e-13 {
            break;
        }
        // Unknowns: all machine angles with an infinite bus; otherwise
        // angles 1..n and the slack share (machine 0 is the reference).
        let mut jac = DMatrix::zeros(n, n);
        for m in 0..n {
            if has_inf {
                for j in 0..n {
                    jac[(m, j)] = k[(m, j)];
                }
            } else {
                for j in 1..n {
                    jac[(m, j)] = k[(m, j)];
                }
                jac[(m, 0)] = -ms.weight[m];
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| TdsError::NoEquilibrium("singular power-flow Jacobian".into()))?;
        let r0 = norm(&r);
        let mut alpha = 1.0;
        loop {
            let mut d2 = delta.clone();
            let mut l2 = lambda;
            if has_inf {
                for j in 0..n {
                    d2[j] += alpha * step[j];
                }
            } else {
                for j in 1..n {
                    d2[j] += alpha * step[j];
                }
                l2 += alpha * step[0];
            }
            let (r2, k2) = residual(&d2, l2);
            if norm(&r2) < r0 || alpha < 1e-4 {
                delta = d2;
                lambda = l2;
                r = r2;
                k = k2;
                break;
            }
            alpha *= 0.5;
        }
    }
    let res = norm(&r);
    if !(res <= EQ_RESIDUAL) {
        return Err(TdsError::NoEquilibrium(format!("power mismatch {res:.3e} pu after Newton iterations")));
    }
    delta.truncate(n);
    Ok((delta, lambda, res))
}

/// Solves the pre-fault operating point with every bus demand scaled by
/// `load_scale`. EMF magnitudes are set so machine terminals sit at
/// `system.voltage_setpoint`, and loads are conductances drawing their
/// scaled demand at the resulting bus voltage.
pub fn prefault_equilibrium(
    case: &GridCase,
    dispatch: &DispatchSolution,
    load_scale: f64,
) -> Result<(MachineSet, Equilibrium), TdsError> {
    let ms = MachineSet::new(case, dispatch)?;
    let n = ms.len();
    let nb = case.n_buses();
    let vset = case.system.voltage_setpoint;
    let demand: Vec<f64> = case.bus_demand().iter().map(|d| d * load_scale).collect();
    let has_inf = case.system.infinite_bus.is_some();
    let status = case.line_status();
    let none = vec![false; n];
    let pos = case.bus_positions();

    let mut e = vec![vset; n];
    let mut load_g: Vec<f64> = demand.iter().map(|d| d / (vset * vset)).collect();
    let mut delta = vec![0.0; n];
    let mut last_change = f64::INFINITY;
    for _ in 0..200 {
        let (y, retained) = extended_admittance(case, &ms, &load_g, &status, None, &none)?;
        let net = Net::from_matrix(&kron_reduce(&y, &retained)?);
        let mut e_full = e.clone();
        if has_inf {
            e_full.push(1.0);
        }
        let (d, _, _) = solve_angles(&net, &ms, &e_full, has_inf, &delta)?;
        delta = d;
        let mut ec: Vec<Complex64> = (0..n).map(|m| Complex64::from_polar(e[m], delta[m])).collect();
        if has_inf {
            ec.push(Complex64::new(1.0, 0.0));
        }
        let v = node_voltages(&y, &retained, &ec);
        let mut change: f64 = 0.0;
        for m in 0..n {
            let vt = v[pos[&ms.buses[m]]].norm();
            if !(vt > 1e-6) {
                return Err(TdsError::NoEquilibrium(format!("terminal voltage of {} collapsed", ms.names[m])));
            }
            let new = e[m] * vset / vt;
            change = change.max((new - e[m]).abs() / e[m]);
            e[m] = new;
        }
        for b in 0..nb {
            let vm = v[b].norm();
            if demand[b] > 0.0 {
                if !(vm > 1e-3) {
                    return Err(TdsError::NoEquilibrium(format!("bus {} voltage collapsed", case.buses[b])));
                }
                let new = demand[b] / (vm * vm);
                change = change.max((new - load_g[b]).abs() / load_g[b]);
                load_g[b] = new;
            }
        }
        last_change = change;
        if change < 1e-12 {
            break;
        }
    }
    if !(last_change < 1e-6) {
        return Err(TdsError::NoEquilibrium(format!(
            "voltage/load iteration did not settle (last relative change {last_change:.2e})"
        )));
    }
    let net = reduced(case, &ms, &load_g, &status, None, &none)?;
    let mut e_full = e.clone();
    if has_inf {
        e_full.push(1.0);
    }
    let (delta, lambda, residual) = solve_angles(&net, &ms, &e_full, has_inf, &delta)?;
    let pm = (0..n).map(|m| ms.p_sched[m] + lambda * ms.weight[m]).collect();
    Ok((ms, Equilibrium { e_mag: e, delta, pm, load_g, slack_share: lambda, residual }))
}

/// Network condition during one integration interval.
#[derive(Clone, Copy, PartialEq, Eq)]
struct NetState {
    fault: bool,
    tripped: bool,
}

struct Dynamics<'a> {
    ms: &'a MachineSet,
    pm: &'a [f64],
    e: Vec<f64>,
    has_inf: bool,
    omega_s: f64,
    n: usize,
    // scratch
    er: Vec<f64>,
    ei: Vec<f64>,
    ir: Vec<f64>,
    ii: Vec<f64>,
}

impl Dynamics<'_> {
    fn load_emf(&mut self, y: &[f64]) {
        for m in 0..self.n {
            let (s, c) = y[m].sin_cos();
            self.er[m] = self.e[m] * c;
            self.ei[m] = self.e[m] * s;
        }
        if self.has_inf {
            self.er[self.n] = 1.0;
            self.ei[self.n] = 0.0;
        }
    }

    fn deriv(&mut self, net: &Net, dead: Option<usize>, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        self.load_emf(y);
        net.currents(&self.er, &self.ei, &mut self.ir, &mut self.ii);
        for m in 0..n {
            if dead == Some(m) {
                dy[m] = 0.0;
                dy[n + m] = 0.0;
                continue;
            }
            let pe = self.er[m] * self.ir[m] + self.ei[m] * self.ii[m];
            let dw = y[n + m] - 1.0;
            dy[m] = self.omega_s * dw;
            dy[n + m] = (self.pm[m] - pe - self.ms.d[m] * dw) / self.ms.m[m];
        }
    }

    fn sample(&mut self, net: &Net, dead: Option<usize>, y: &[f64]) -> Vec<MachineSample> {
        let n = self.n;
        self.load_emf(y);
        net.currents(&self.er, &self.ei, &mut self.ir, &mut self.ii);
        (0..n)
            .map(|m| {
                let omega = y[n + m];
                let e = Complex64::new(self.er[m], self.ei[m]);
                let i = if dead == Some(m) { Complex64::new(0.0, 0.0) } else { Complex64::new(self.ir[m], self.ii[m]) };
                let vt = e - Complex64::new(0.0, self.ms.reactance[m]) * i;
                let s = vt * i.conj();
                // Machine frame: q axis along the EMF.
                let rot = Complex64::from_polar(1.0, -y[m]) * Complex64::new(0.0, 1.0);
                let idq = i * rot;
                let vdq = vt * rot;
                MachineSample {
                    delta_deg: y[m].to_degrees(),
                    omega,
                    id: idq.re,
                    iq: idq.im,
                    vd: vdq.re,
                    vq: vdq.im,
                    te: s.re / omega,
                    pg: s.re,
                    qg: s.im,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
struct StopPoint {
    t: f64,
    sample: bool,
}

fn stop_points(cfg: &SimConfig, events: &[f64]) -> Vec<StopPoint> {
    let mut pts = Vec::new();
    let n_steps = (cfg.horizon / cfg.step + 1e-9).floor() as usize;
    for k in 0..=n_steps {
        pts.push(StopPoint { t: k as f64 * cfg.step, sample: false });
    }
    let n_samp = (cfg.horizon / cfg.sample_period + 1e-9).floor() as usize;
    for k in 0..=n_samp {
        pts.push(StopPoint { t: k as f64 * cfg.sample_period, sample: true });
    }
    pts.push(StopPoint { t: cfg.horizon, sample: false });
    for &t in events {
        if t > 0.0 && t < cfg.horizon {
            pts.push(StopPoint { t, sample: false });
        }
    }
    pts.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut merged: Vec<StopPoint> = Vec::with_capacity(pts.len());
    for p in pts {
        match merged.last_mut() {
            Some(last) if (p.t - last.t).abs() <= 1e-9 * (1.0 + p.t.abs()) => {
                if p.sample {
                    last.sample = true;
                    last.t = p.t;
                }
            }
            _ => merged.push(p),
        }
    }
    merged
}

/// Runs one contingency from the pre-fault equilibrium of `dispatch`.
pub fn simulate(
    case: &GridCase,
    dispatch: &DispatchSolution,
    scn: &FaultScenario,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord, TdsError> {
    cfg.validate()?;
    scn.validate(case)?;
    let (ms, eq) = prefault_equilibrium(case, dispatch, scn.load_scale)?;
    let n = ms.len();
    let has_inf = case.system.infinite_bus.is_some();
    let status = case.line_status();
    let faulted = scn.duration > 0.0;
    let t_clear = scn.clear_time();
    let trip = scn.generator_trip;
    let trip_machine = trip.map(|t| t.machine);

    let eps = 1e-9;
    let state_at = |t: f64| NetState {
        fault: faulted && t >= scn.fault_start - eps && t < t_clear - eps,
        tripped: trip.map_or(false, |tr| t >= tr.time - eps),
    };

    let mut event_times = vec![];
    if faulted {
        event_times.extend([scn.fault_start, t_clear]);
    }
    if let Some(tr) = trip {
        event_times.push(tr.time);
    }
    let points = stop_points(cfg, &event_times);

    let mut nets: Vec<(NetState, Net)> = Vec::new();
    for p in &points {
        let st = state_at(p.t);
        if nets.iter().any(|(s, _)| *s == st) {
            continue;
        }
        let mut tripped = vec![false; n];
        if st.tripped {
            tripped[trip_machine.unwrap()] = true;
        }
        let mut ls = status.clone();
        let fault = if st.fault {
            let li = case.line_index(scn.line).unwrap();
            ls[li] = 0;
            Some(FaultLocation { line_id: scn.line, x: scn.location })
        } else {
            None
        };
        nets.push((st, reduced(case, &ms, &eq.load_g, &ls, fault, &tripped)?));
    }

    let machines: Vec<MachineInfo> = (0..n)
        .map(|m| MachineInfo {
            name: ms.names[m].clone(),
            kind: ms.kinds[m],
            bus: ms.buses[m],
            h: ms.m[m] / 2.0,
            trip_time: trip.filter(|t| t.machine == m && t.time <= cfg.horizon).map(|t| t.time),
        })
        .collect();

    let nr = n + has_inf as usize;
    let mut dynm = Dynamics {
        ms: &ms,
        pm: &eq.pm,
        e: eq.e_mag.clone(),
        has_inf,
        omega_s: case.omega_s(),
        n,
        er: vec![0.0; nr],
        ei: vec![0.0; nr],
        ir: vec![0.0; nr],
        ii: vec![0.0; nr],
    };

    let mut y: Vec<f64> = eq.delta.iter().copied().chain(std::iter::repeat(1.0).take(n)).collect();
    let mut rec = TrajectoryRecord {
        times: vec![],
        machines,
        samples: vec![],
        coi: vec![],
        reference_deg: if has_inf { Some(0.0) } else { None },
        nominal_freq: case.system.nominal_freq,
        events: vec![],
        aborted: None,
    };
    let mut k1 = vec![0.0; 2 * n];
    let mut k2 = vec![0.0; 2 * n];
    let mut k3 = vec![0.0; 2 * n];
    let mut k4 = vec![0.0; 2 * n];
    let mut tmp = vec![0.0; 2 * n];
    let mut prev_state: Option<NetState> = None;

    for idx in 0..points.len() {
        let t = points[idx].t;
        let st = state_at(t);
        if prev_state.map_or(true, |p| p != st) {
            let p = prev_state.unwrap_or(NetState { fault: false, tripped: false });
            if st.fault && !p.fault {
                rec.events.push(Event { t, kind: EventKind::FaultOn { line: scn.line, location: scn.location } });
            }
            if !st.fault && p.fault {
                rec.events.push(Event { t, kind: EventKind::FaultOff { line: scn.line } });
            }
            if st.tripped && !p.tripped {
                rec.events.push(Event { t, kind: EventKind::Trip { machine: trip_machine.unwrap() } });
            }
            prev_state = Some(st);
        }
        let net = &nets.iter().find(|(s, _)| *s == st).unwrap().1;
        let dead = if st.tripped { trip_machine } else { None };
        if points[idx].sample {
            let s = dynm.sample(net, dead, &y);
            let (mut num, mut den) = (0.0, 0.0);
            for (m, info) in rec.machines.iter().enumerate() {
                if info.alive_at(t) {
                    num += info.h * s[m].omega;
                    den += info.h;
                }
            }
            if den == 0.0 {
                return Err(TdsError::AllTripped(t));
            }
            rec.times.push(t);
            rec.coi.push(num / den);
            rec.samples.push(s);
            if cfg.stop_on_separation && super::tis::spread_deg(&rec, rec.samples.len() - 1) > 360.0 {
                break;
            }
        }
        if idx + 1 == points.len() {
            break;
        }
        let h = points[idx + 1].t - t;
        dynm.deriv(net, dead, &y, &mut k1);
        for j in 0..2 * n {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        dynm.deriv(net, dead, &tmp, &mut k2);
        for j in 0..2 * n {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        dynm.deriv(net, dead, &tmp, &mut k3);
        for j in 0..2 * n {
            tmp[j] = y[j] + h * k3[j];
        }
        dynm.deriv(net, dead, &tmp, &mut k4);
        for j in 0..2 * n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = points[idx + 1].t;
        let worst = (0..n)
            .filter(|&m| dead != Some(m))
            .map(|m| (m, (y[n + m] - 1.0).abs()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if !(worst.1 <= SPEED_ABORT) {
            let reason = format!("speed of {} deviated by {:.3} pu at t = {:.4} s", ms.names[worst.0], worst.1, t_next);
            rec.events.push(Event { t: t_next, kind: EventKind::Abort { reason: reason.clone() } });
            rec.aborted = Some(reason);
            break;
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{solve_vis, DispatchInput, DEFAULT_TOL};
    use crate::grid::bundled;

    fn base(name: &str) -> (GridCase, DispatchSolution) {
        let case = bundled(name).unwrap();
        let sol = solve_vis(&case, &DispatchInput::nominal(&case), DEFAULT_TOL).unwrap();
        (case, sol)
    }

    #[test]
    fn equilibrium_residual_and_terminal_voltage() {
        for name in ["case_smib", "case9ish", "case39"] {
            let (case, sol) = base(name);
            let (ms, eq) = prefault_equilibrium(&case, &sol, 1.0).unwrap();
            assert!(eq.residual < 1e-9, "{name}: {}", eq.residual);
            // Loads draw their demand.
            let (y, retained) =
                extended_admittance(&case, &ms, &eq.load_g, &case.line_status(), None, &vec![false; ms.len()]).unwrap();
            let mut e: Vec<Complex64> =
                (0..ms.len()).map(|m| Complex64::from_polar(eq.e_mag[m], eq.delta[m])).collect();
            if case.system.infinite_bus.is_some() {
                e.push(Complex64::new(1.0, 0.0));
            }
            let v = node_voltages(&y, &retained, &e);
            let d = case.bus_demand();
            let inf = case.system.infinite_bus.map(|b| case.bus_index(b));
            for b in 0..case.n_buses() {
                if Some(b) != inf {
                    assert!((eq.load_g[b] * v[b].norm_sqr() - d[b]).abs() < 1e-8, "{name} bus {b}");
                }
            }
            for m in 0..ms.len() {
                let vt = v[case.bus_index(ms.buses[m])].norm();
                assert!((vt - case.system.voltage_setpoint).abs() < 1e-8, "{name} {}: {vt}", ms.names[m]);
            }
        }
    }

    #[test]
    fn stop_points_hit_events_exactly() {
        let cfg = SimConfig::default();
        let pts = stop_points(&cfg, &[1.0, 1.1234567]);
        assert!(pts.iter().any(|p| p.t == 1.1234567));
        assert_eq!(pts.iter().filter(|p| p.sample).count(), 876);
        assert!(pts.windows(2).all(|w| w[1].t > w[0].t));
    }
}
