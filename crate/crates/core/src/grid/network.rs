use super::{GridCase, GridError};
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// A bolted fault on line `line_id`, a fraction `x` of the way from its
/// `from_bus` towards its `to_bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultLocation {
    pub line_id: usize,
    pub x: f64,
}

const END_EPS: f64 = 1e-12;

fn series(x: f64) -> Complex64 {
    Complex64::new(0.0, -1.0 / x)
}

pub(crate) fn stamp_branch(y: &mut CMatrix, a: usize, b: usize, adm: Complex64) {
    y[(a, a)] += adm;
    y[(b, b)] += adm;
    y[(a, b)] -= adm;
    y[(b, a)] -= adm;
}

/// Bus admittance matrix of the in-service lines, in `case.buses` order.
///
/// With a fault, line `fault.line_id` (which must be switched out in
/// `line_status`) is re-inserted as two series segments meeting at a node
/// grounded through `system.fault_shunt`; that node is eliminated in closed
/// form. Machines and loads are not included.
pub fn build_admittance(
    case: &GridCase,
    line_status: &[u8],
    fault: Option<FaultLocation>,
) -> Result<CMatrix, GridError> {
    if line_status.len() != case.lines.len() {
        return Err(GridError::StatusLength {
            expected: case.lines.len(),
            got: line_status.len(),
        });
    }
    let pos = case.bus_positions();
    let n = case.n_buses();
    let mut y = CMatrix::zeros(n, n);
    for (line, &on) in case.lines.iter().zip(line_status) {
        if on == 1 {
            stamp_branch(&mut y, pos[&line.from_bus], pos[&line.to_bus], series(line.reactance));
        }
    }
    if let Some(f) = fault {
        let li = case.line_index(f.line_id).ok_or(GridError::NoSuchLine(f.line_id))?;
        if !(0.0..=1.0).contains(&f.x) {
            return Err(GridError::FaultLocation(f.x));
        }
        if line_status[li] != 0 {
            return Err(GridError::FaultedLineInService(f.line_id));
        }
        let line = &case.lines[li];
        let (a, b) = (pos[&line.from_bus], pos[&line.to_bus]);
        let g = Complex64::new(case.system.fault_shunt, 0.0);
        if f.x <= END_EPS {
            stamp_branch(&mut y, a, b, series(line.reactance));
            y[(a, a)] += g;
        } else if f.x >= 1.0 - END_EPS {
            stamp_branch(&mut y, a, b, series(line.reactance));
            y[(b, b)] += g;
        } else {
            // Star (segment a–F, segment F–b, shunt at F) to mesh.
            let y1 = series(f.x * line.reactance);
            let y2 = series((1.0 - f.x) * line.reactance);
            let total = y1 + y2 + g;
            y[(a, a)] += y1 - y1 * y1 / total;
            y[(b, b)] += y2 - y2 * y2 / total;
            let m = y1 * y2 / total;
            y[(a, b)] -= m;
            y[(b, a)] -= m;
        }
    }
    Ok(y)
}

/// Eliminates every node not listed in `retained`:
/// `Y_rr − Y_rn Y_nn⁻¹ Y_nr`, rows and columns in `retained` order.
pub fn kron_reduce(y: &CMatrix, retained: &[usize]) -> Result<CMatrix, GridError> {
    let n = y.nrows();
    let mut keep = vec![false; n];
    for &r in retained {
        keep[r] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        CMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
    };
    let y_rr = pick(retained, retained);
    if interior.is_empty() {
        return Ok(y_rr);
    }
    let y_nn = pick(&interior, &interior);
    let y_nr = pick(&interior, retained);
    let y_rn = pick(retained, &interior);
    let scale = y_nn.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let lu = y_nn.lu();
    let min_pivot = (0..interior.len())
        .map(|i| lu.u()[(i, i)].norm())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-11 * scale) {
        return Err(GridError::SingularInterior);
    }
    let x = lu.solve(&y_nr).ok_or(GridError::SingularInterior)?;
    Ok(y_rr - y_rn * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

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
    fn lossless_rows_sum_to_zero_and_symmetric() {
        for name in ["case_smib", "case9ish", "case39"] {
            let case = bundled(name).unwrap();
            let y = build_admittance(&case, &case.line_status(), None).unwrap();
            for i in 0..y.nrows() {
                let s: Complex64 = y.row(i).iter().sum();
                assert!(s.norm() < 1e-9, "{name} row {i} sums to {s}");
                for j in 0..y.ncols() {
                    assert!((y[(i, j)] - y[(j, i)]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn smib_sending_end_fault_dominated_by_shunt() {
        let case = bundled("case_smib").unwrap();
        let y = build_admittance(&case, &[0], Some(FaultLocation { line_id: 1, x: 0.0 })).unwrap();
        let d = y[(0, 0)];
        assert!(d.re > 1e5, "{d}");
        assert!(d.re > 1e4 * y[(1, 1)].norm());
    }

    #[test]
    fn removing_line_matches_rebuilt_chain() {
        let tri = triangle();
        let y_removed = build_admittance(&tri, &[1, 1, 0], None).unwrap();
        let mut chain = tri.clone();
        chain.lines.truncate(2);
        let y_chain = build_admittance(&chain, &chain.line_status(), None).unwrap();
        assert!((y_removed - y_chain).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn midline_fault_equals_explicit_node_elimination() {
        let tri = triangle();
        let x = 0.3;
        let y = build_admittance(&tri, &[0, 1, 1], Some(FaultLocation { line_id: 1, x })).unwrap();
        // Same network with the fault node kept explicitly, then reduced.
        let mut big = CMatrix::zeros(4, 4);
        stamp_branch(&mut big, 1, 2, series(0.1));
        stamp_branch(&mut big, 0, 2, series(0.1));
        stamp_branch(&mut big, 0, 3, series(x * 0.1));
        stamp_branch(&mut big, 3, 1, series((1.0 - x) * 0.1));
        big[(3, 3)] += c(tri.system.fault_shunt, 0.0);
        let red = kron_reduce(&big, &[0, 1, 2]).unwrap();
        for (a, b) in y.iter().zip(red.iter()) {
            assert!((a - b).norm() < 1e-6 * (1.0 + b.norm()), "{a} vs {b}");
        }
    }

    #[test]
    fn fault_errors() {
        let tri = triangle();
        assert!(matches!(
            build_admittance(&tri, &[0, 1, 1], Some(FaultLocation { line_id: 9, x: 0.5 })),
            Err(GridError::NoSuchLine(9))
        ));
        assert!(matches!(
            build_admittance(&tri, &[0, 1, 1], Some(FaultLocation { line_id: 1, x: 1.5 })),
            Err(GridError::FaultLocation(_))
        ));
        assert!(matches!(
            build_admittance(&tri, &[1, 1, 1], Some(FaultLocation { line_id: 1, x: 0.5 })),
            Err(GridError::FaultedLineInService(1))
        ));
        assert!(matches!(
            build_admittance(&tri, &[1, 1], None),
            Err(GridError::StatusLength { .. })
        ));
    }

    #[test]
    fn kron_retain_all_is_identity() {
        let case = bundled("case9ish").unwrap();
        let y = build_admittance(&case, &case.line_status(), None).unwrap();
        let all: Vec<usize> = (0..y.nrows()).collect();
        assert_eq!(kron_reduce(&y, &all).unwrap(), y);
    }

    #[test]
    fn kron_series_chain() {
        // a -(0.2)- b -(0.3)- c
        let mut y = CMatrix::zeros(3, 3);
        stamp_branch(&mut y, 0, 1, series(0.2));
        stamp_branch(&mut y, 1, 2, series(0.3));
        let r = kron_reduce(&y, &[0, 2]).unwrap();
        let expect = series(0.2 + 0.3);
        assert!((r[(0, 0)] - expect).norm() < 1e-12);
        assert!((r[(0, 1)] + expect).norm() < 1e-12);
        assert!((r[(0, 1)] - r[(1, 0)]).norm() < 1e-12);
    }

    #[test]
    fn kron_smib_transfer_admittance() {
        let case = bundled("case_smib").unwrap();
        let xd = case.sgs[0].transient_reactance;
        let y = build_admittance(&case, &case.line_status(), None).unwrap();
        // Append the machine internal node behind x'd at bus 1.
        let mut big = CMatrix::zeros(3, 3);
        big.view_mut((0, 0), (2, 2)).copy_from(&y);
        stamp_branch(&mut big, 2, 0, series(xd));
        let r = kron_reduce(&big, &[2, 1]).unwrap();
        let expect = 1.0 / (xd + case.lines[0].reactance);
        assert!((r[(0, 1)] - c(0.0, expect)).norm() < 1e-12, "{}", r[(0, 1)]);
    }

    #[test]
    fn kron_singular_interior_detected() {
        // Bus 2 has no connection at all.
        let mut y = CMatrix::zeros(3, 3);
        stamp_branch(&mut y, 0, 1, series(0.1));
        assert!(matches!(kron_reduce(&y, &[0, 1]), Err(GridError::SingularInterior)));
    }
}
