//! Dense convex QP with diagonal curvature.
//!
//! ```text
//!     minimise   Σ c_i x_i² + g'x + k
//!     s.t.       A_eq x  = b_eq
//!                A_in x <= b_in
//!                l <= x <= u
//! ```
//!
//! Zero curvature is allowed. The problem is solved as a sequence of
//! proximal subproblems `+ ρ/2 |x − x_k|²`, each strictly convex and solved
//! exactly with the Goldfarb–Idnani dual active-set method. The first
//! subproblem starts from `x = 0`, so ties among optimal points resolve
//! towards the minimum-norm solution.

use super::DispatchError;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub label: String,
}

impl ConstraintRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Quadratic program with a diagonal, nonnegative curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub names: Vec<String>,
    /// Coefficient of x_i² in the cost.
    pub curvature: Vec<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub equalities: Vec<ConstraintRow>,
    /// Rows read `coeffs · x <= rhs`.
    pub inequalities: Vec<ConstraintRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub outer_iterations: usize,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.curvature.len()
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        self.constant
            + x.iter()
                .enumerate()
                .map(|(i, v)| self.curvature[i] * v * v + self.linear[i] * v)
                .sum::<f64>()
    }

    pub fn check_dimensions(&self) -> Result<(), DispatchError> {
        let n = self.n_vars();
        let ok = self.names.len() == n
            && self.linear.len() == n
            && self.lower.len() == n
            && self.upper.len() == n
            && self
                .equalities
                .iter()
                .chain(&self.inequalities)
                .all(|r| r.coeffs.len() == n);
        if !ok {
            return Err(DispatchError::Dimensions);
        }
        if let Some(i) = self.curvature.iter().position(|c| !(*c >= 0.0)) {
            return Err(DispatchError::NonConvex(self.names[i].clone()));
        }
        Ok(())
    }

    /// Largest constraint violation of `x` (absolute).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for r in &self.equalities {
            v = v.max((r.dot(x) - r.rhs).abs());
        }
        for r in &self.inequalities {
            v = v.max(r.dot(x) - r.rhs);
        }
        for i in 0..x.len() {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        v
    }
}

/// One constraint in Goldfarb–Idnani form `n'x >= b`.
struct Gc {
    normal: Vec<f64>,
    rhs: f64,
    equality: bool,
    source: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Active {
    idx: usize,
    sign: f64,
}

struct GiOutput {
    x: Vec<f64>,
    /// (constraint index, oriented sign, multiplier)
    duals: Vec<(usize, f64, f64)>,
}

/// Goldfarb–Idnani for `½ x' diag(d) x + a'x` subject to `cons`.
fn goldfarb_idnani(d: &[f64], a: &[f64], cons: &[Gc]) -> Result<GiOutput, usize> {
    let n = d.len();
    let ginv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    let mut x: Vec<f64> = (0..n).map(|i| -a[i] * ginv[i]).collect();
    let mut active: Vec<Active> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; cons.len()];
    let max_iter = 50 * (n + cons.len()) + 100;

    let directions = |active: &[Active], np: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let q = active.len();
        let gn: Vec<f64> = (0..n).map(|i| ginv[i] * np[i]).collect();
        if q == 0 {
            return (gn, Vec::new());
        }
        let cols: Vec<Vec<f64>> = active
            .iter()
            .map(|a| cons[a.idx].normal.iter().map(|v| v * a.sign).collect())
            .collect();
        let m = DMatrix::from_fn(q, q, |i, j| {
            (0..n).map(|k| cols[i][k] * ginv[k] * cols[j][k]).sum::<f64>()
        });
        let w = DVector::from_fn(q, |i, _| dot(&cols[i], &gn));
        let r = match m.clone().cholesky() {
            Some(ch) => ch.solve(&w),
            None => m.lu().solve(&w).unwrap_or_else(|| DVector::zeros(q)),
        };
        let mut z = gn;
        for (j, col) in cols.iter().enumerate() {
            for k in 0..n {
                z[k] -= ginv[k] * col[k] * r[j];
            }
        }
        (z, r.iter().copied().collect())
    };

    let scale_b = cons.iter().fold(1.0f64, |m, c| m.max(c.rhs.abs()));
    let viol_tol = 1e-12 * scale_b.max(norm_inf(&x));

    let mut iter = 0;
    loop {
        // Next constraint to add: pending equalities first, then the most
        // violated inequality (normalised slack).
        let mut pick: Option<(usize, f64)> = None;
        for (j, c) in cons.iter().enumerate() {
            if c.equality && !in_active[j] {
                let s = dot(&c.normal, &x) - c.rhs;
                pick = Some((j, if s > 0.0 { -1.0 } else { 1.0 }));
                break;
            }
        }
        if pick.is_none() {
            let mut worst = -viol_tol;
            for (j, c) in cons.iter().enumerate() {
                if c.equality || in_active[j] {
                    continue;
                }
                let nn = norm_inf(&c.normal).max(1e-300);
                let s = (dot(&c.normal, &x) - c.rhs) / nn;
                if s < worst {
                    worst = s;
                    pick = Some((j, 1.0));
                }
            }
        }
        let Some((p, sign)) = pick else {
            let duals = active
                .iter()
                .zip(&u)
                .map(|(a, v)| (a.idx, a.sign, *v))
                .collect();
            return Ok(GiOutput { x, duals });
        };
        let np: Vec<f64> = cons[p].normal.iter().map(|v| v * sign).collect();
        let bp = cons[p].rhs * sign;
        let mut up = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(p);
            }
            let sp = dot(&np, &x) - bp;
            let (z, r) = directions(&active, &np);
            let zn = dot(&z, &np);
            let gnn: f64 = (0..n).map(|k| np[k] * ginv[k] * np[k]).sum();
            let t2 = if zn > 1e-12 * gnn { (-sp / zn).max(0.0) } else { f64::INFINITY };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, a) in active.iter().enumerate() {
                if !cons[a.idx].equality && r[j] > 1e-14 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            if t1.is_infinite() && t2.is_infinite() {
                return Err(p);
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                for k in 0..n {
                    x[k] += t * z[k];
                }
            }
            for j in 0..u.len() {
                u[j] -= t * r[j];
            }
            up += t;
            if t2 <= t1 {
                active.push(Active { idx: p, sign });
                u.push(up);
                in_active[p] = true;
                break;
            }
            let k = drop.expect("partial step has a blocking constraint");
            in_active[active[k].idx] = false;
            active.remove(k);
            u.remove(k);
        }
    }
}

/// Solves the QP to the requested KKT tolerance.
pub fn solve(problem: &QpProblem, tol: f64) -> Result<QpResult, DispatchError> {
    problem.check_dimensions()?;
    let n = problem.n_vars();
    // Rows without coefficients are either trivially satisfied or a
    // certificate of infeasibility on their own.
    for r in &problem.equalities {
        if r.coeffs.iter().all(|v| *v == 0.0) && r.rhs.abs() > 1e-12 * (1.0 + r.rhs.abs()) {
            return Err(DispatchError::Infeasible { constraint: r.label.clone() });
        }
    }
    for r in &problem.inequalities {
        if r.coeffs.iter().all(|v| *v == 0.0) && r.rhs < -1e-12 {
            return Err(DispatchError::Infeasible { constraint: r.label.clone() });
        }
    }
    let mut cons = Vec::new();
    for (i, r) in problem.equalities.iter().enumerate() {
        if r.coeffs.iter().all(|v| *v == 0.0) {
            continue;
        }
        cons.push(Gc { normal: r.coeffs.clone(), rhs: r.rhs, equality: true, source: i });
    }
    let base_in = problem.equalities.len();
    for (i, r) in problem.inequalities.iter().enumerate() {
        if r.coeffs.iter().all(|v| *v == 0.0) {
            continue;
        }
        cons.push(Gc {
            normal: r.coeffs.iter().map(|v| -v).collect(),
            rhs: -r.rhs,
            equality: false,
            source: base_in + i,
        });
    }
    let base_bd = base_in + problem.inequalities.len();
    for i in 0..n {
        let mut e = vec![0.0; n];
        if problem.lower[i].is_finite() {
            e[i] = 1.0;
            cons.push(Gc { normal: e.clone(), rhs: problem.lower[i], equality: false, source: base_bd + 2 * i });
        }
        if problem.upper[i].is_finite() {
            e[i] = -1.0;
            cons.push(Gc { normal: e, rhs: -problem.upper[i], equality: false, source: base_bd + 2 * i + 1 });
        }
    }
    let label = |source: usize| -> String {
        if source < base_in {
            problem.equalities[source].label.clone()
        } else if source < base_bd {
            problem.inequalities[source - base_in].label.clone()
        } else {
            let i = (source - base_bd) / 2;
            let side = if (source - base_bd) % 2 == 0 { "lower" } else { "upper" };
            format!("{side} bound of {}", problem.names[i])
        }
    };

    let g_scale = norm_inf(&problem.linear).max(norm_inf(&problem.curvature)).max(1.0);
    let rho = 1e-4 * g_scale;
    let d: Vec<f64> = problem.curvature.iter().map(|c| 2.0 * c + rho).collect();
    let mut center = vec![0.0; n];
    let max_outer = 2000;
    let mut last = None;
    for outer in 1..=max_outer {
        let a: Vec<f64> = (0..n).map(|i| problem.linear[i] - rho * center[i]).collect();
        let out = goldfarb_idnani(&d, &a, &cons).map_err(|p| DispatchError::Infeasible {
            constraint: label(cons[p].source),
        })?;
        if norm_inf(&out.x) > 1e12 {
            return Err(DispatchError::Unbounded);
        }
        let step = (0..n).map(|i| (out.x[i] - center[i]).abs()).fold(0.0, f64::max);
        center = out.x.clone();
        let kkt = kkt_residual(problem, &cons, &out);
        last = Some((out, kkt));
        if kkt <= 0.1 * tol || (step == 0.0 && kkt <= tol) {
            let (out, kkt) = last.unwrap();
            return Ok(QpResult {
                cost: problem.cost(&out.x),
                x: out.x,
                kkt_residual: kkt,
                outer_iterations: outer,
            });
        }
    }
    let (out, kkt) = last.expect("at least one outer iteration");
    if kkt <= tol {
        return Ok(QpResult {
            cost: problem.cost(&out.x),
            x: out.x,
            kkt_residual: kkt,
            outer_iterations: max_outer,
        });
    }
    Err(DispatchError::NotConverged { residual: kkt })
}

/// Scaled max of stationarity, primal infeasibility, dual infeasibility and
/// complementarity residuals of the original (unregularised) problem.
fn kkt_residual(problem: &QpProblem, cons: &[Gc], out: &GiOutput) -> f64 {
    let n = problem.n_vars();
    let x = &out.x;
    let mut grad: Vec<f64> = (0..n)
        .map(|i| 2.0 * problem.curvature[i] * x[i] + problem.linear[i])
        .collect();
    let mut dual_inf: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for &(idx, sign, mult) in &out.duals {
        let c = &cons[idx];
        for k in 0..n {
            grad[k] -= mult * sign * c.normal[k];
        }
        if !c.equality {
            dual_inf = dual_inf.max(-mult);
            comp = comp.max((mult * (dot(&c.normal, x) - c.rhs)).abs());
        }
    }
    let g_scale = 1.0 + norm_inf(&problem.linear);
    let b_scale = 1.0 + cons.iter().fold(0.0f64, |m, c| m.max(c.rhs.abs()));
    let stat = norm_inf(&grad) / g_scale;
    let primal = problem.max_violation(x).max(0.0) / b_scale;
    let comp = comp / (1.0 + problem.cost(x).abs());
    stat.max(primal).max(dual_inf / g_scale).max(comp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coeffs: Vec<f64>, rhs: f64) -> ConstraintRow {
        ConstraintRow { coeffs, rhs, label: "r".into() }
    }

    fn problem(curv: Vec<f64>, lin: Vec<f64>) -> QpProblem {
        let n = curv.len();
        QpProblem {
            names: (0..n).map(|i| format!("x{i}")).collect(),
            curvature: curv,
            linear: lin,
            constant: 0.0,
            equalities: vec![],
            inequalities: vec![],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    #[test]
    fn single_quadratic_with_equality() {
        let mut p = problem(vec![1.0], vec![0.0]);
        p.equalities.push(row(vec![1.0], 2.0));
        p.upper = vec![10.0];
        let r = solve(&p, 1e-8).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-9);
        assert!((r.cost - 4.0).abs() < 1e-9);
        assert!(r.kkt_residual <= 1e-8);
    }

    #[test]
    fn pure_lp_takes_cheapest_and_min_norm_tie() {
        // min x0 + 2 x1 + x2 s.t. x0 + x1 + x2 = 3, x <= 2.
        let mut p = problem(vec![0.0; 3], vec![1.0, 2.0, 1.0]);
        p.equalities.push(row(vec![1.0, 1.0, 1.0], 3.0));
        p.upper = vec![2.0; 3];
        let r = solve(&p, 1e-8).unwrap();
        assert!((r.cost - 3.0).abs() < 1e-8, "{:?}", r);
        // x0 and x2 tie: minimum norm splits evenly.
        assert!((r.x[0] - 1.5).abs() < 1e-6 && (r.x[2] - 1.5).abs() < 1e-6, "{:?}", r.x);
        assert!(r.x[1].abs() < 1e-9);
    }

    #[test]
    fn inequality_binding() {
        // min (x0 - 0)^2 + (x1)^2 - 4 x0 - 4 x1 s.t. x0 + x1 <= 2.
        let mut p = problem(vec![1.0, 1.0], vec![-4.0, -4.0]);
        p.inequalities.push(row(vec![1.0, 1.0], 2.0));
        let r = solve(&p, 1e-8).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = problem(vec![1.0], vec![0.0]);
        p.equalities.push(row(vec![1.0], 5.0));
        p.upper = vec![1.0];
        assert!(matches!(solve(&p, 1e-8), Err(DispatchError::Infeasible { .. })));
    }

    #[test]
    fn unbounded_detected() {
        let mut p = problem(vec![0.0], vec![-1.0]);
        p.lower = vec![f64::NEG_INFINITY];
        p.upper = vec![f64::INFINITY];
        p.lower[0] = 0.0;
        assert!(matches!(solve(&p, 1e-8), Err(DispatchError::Unbounded) | Err(DispatchError::NotConverged { .. })));
    }
}
