use super::sim::{prefault_equilibrium, Net};
use super::TdsError;
use crate::dispatch::DispatchSolution;
use crate::grid::{build_admittance, kron_reduce, CMatrix, GridCase};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// State matrix of the swing system linearised at the pre-fault
/// equilibrium, states ordered `[δ; ω]`.
pub fn jacobian(case: &GridCase, dispatch: &DispatchSolution) -> Result<DMatrix<f64>, TdsError> {
    let (ms, eq) = prefault_equilibrium(case, dispatch, 1.0)?;
    let n = ms.len();
    let nb = case.n_buses();
    let y_net = build_admittance(case, &case.line_status(), None)?;
    let mut y = CMatrix::zeros(nb + n, nb + n);
    y.view_mut((0, 0), (nb, nb)).copy_from(&y_net);
    for b in 0..nb {
        y[(b, b)] += Complex64::new(eq.load_g[b], 0.0);
    }
    let pos = case.bus_positions();
    for m in 0..n {
        let adm = Complex64::new(0.0, -1.0 / ms.reactance[m]);
        let (a, b) = (nb + m, pos[&ms.buses[m]]);
        y[(a, a)] += adm;
        y[(b, b)] += adm;
        y[(a, b)] -= adm;
        y[(b, a)] -= adm;
    }
    let mut retained: Vec<usize> = (nb..nb + n).collect();
    let mut e = eq.e_mag.clone();
    let mut delta = eq.delta.clone();
    if let Some(ib) = case.system.infinite_bus {
        retained.push(pos[&ib]);
        e.push(1.0);
        delta.push(0.0);
    }
    let red = kron_reduce(&y, &retained)?;
    let nr = red.nrows();
    let net = Net {
        nr,
        g: (0..nr * nr).map(|k| red[(k / nr, k % nr)].re).collect(),
        b: (0..nr * nr).map(|k| red[(k / nr, k % nr)].im).collect(),
    };
    let (_, k) = net.power(&e, &delta, n);
    let ws = case.omega_s();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = ws;
        for j in 0..n {
            a[(n + i, j)] = -k[(i, j)] / ms.m[i];
        }
        a[(n + i, n + i)] = -ms.d[i] / ms.m[i];
    }
    Ok(a)
}

/// All eigenvalues of [`jacobian`], sorted by decreasing real part.
pub fn linearize_eigenvalues(case: &GridCase, dispatch: &DispatchSolution) -> Result<Vec<Complex64>, TdsError> {
    let a = jacobian(case, dispatch)?;
    let mut ev: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(ev)
}
