use super::{Matrix, PredictorError};
use crate::tds::{MachineKind, MachineSample, TrajectoryRecord};
use serde::{Deserialize, Serialize};

pub const FEATURES_PER_MACHINE: usize = 27;
/// Raw samples in a window: 0.5 s at the 8 ms measurement period.
pub const RAW_WIDTH: usize = 62;
pub const WIDTH: usize = 250;
/// Counterpart slots per machine for the angle-difference rows.
pub const MAX_COUNTERPARTS: usize = 9;
const PRIMARY: [&str; 9] = ["id", "iq", "vd", "vq", "delta", "omega", "te", "pg", "qg"];
const TIME_EPS: f64 = 1e-9;

/// Feature rows of one run, raw or upsampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub matrix: Matrix,
    /// `machine:feature` per row.
    pub row_names: Vec<String>,
    pub t_clear: f64,
    pub raw_width: usize,
}

fn feature_names() -> Vec<String> {
    let mut v: Vec<String> = PRIMARY.iter().map(|s| s.to_string()).collect();
    v.extend(PRIMARY.iter().map(|s| format!("d_{s}")));
    v.extend((0..MAX_COUNTERPARTS).map(|k| format!("ang_{k}")));
    v
}

/// The 0.5 s window ending at the latest sample not after `t_clear`.
///
/// Per SG, 9 measured channels, their first differences (first entry 0),
/// then |δ_i − δ_j| against each other SG in machine order, zero-padded to 9
/// slots. IBRs are not measured.
pub fn extract_features(traj: &TrajectoryRecord, t_clear: f64) -> Result<FeatureWindow, PredictorError> {
    let sgs: Vec<usize> = (0..traj.n_machines()).filter(|&m| traj.machines[m].kind == MachineKind::Sg).collect();
    if sgs.is_empty() {
        return Err(PredictorError::Window("trajectory has no SGs".into()));
    }
    if sgs.len() - 1 > MAX_COUNTERPARTS {
        return Err(PredictorError::Window(format!("{} SGs exceed the {} counterpart slots", sgs.len(), MAX_COUNTERPARTS)));
    }
    let end = traj
        .times
        .iter()
        .rposition(|&t| t <= t_clear + TIME_EPS)
        .ok_or_else(|| PredictorError::Window(format!("no sample at or before t = {t_clear}")))?;
    if end + 1 < RAW_WIDTH {
        return Err(PredictorError::Window(format!("window ending at t = {t_clear} starts before the first sample")));
    }
    if traj.times.last().map_or(true, |&t| t < t_clear - traj_period(traj)) {
        return Err(PredictorError::Window(format!("trajectory ends before t = {t_clear}")));
    }
    let start = end + 1 - RAW_WIDTH;
    let samples: &[Vec<MachineSample>] = &traj.samples[start..=end];

    let names = feature_names();
    let mut m = Matrix::zeros(FEATURES_PER_MACHINE * sgs.len(), RAW_WIDTH);
    let mut row_names = Vec::with_capacity(m.rows);
    for (i, &mi) in sgs.iter().enumerate() {
        let base = i * FEATURES_PER_MACHINE;
        // PRIMARY follows the MachineSample channel order.
        for f in 0..9 {
            for (k, s) in samples.iter().enumerate() {
                m[(base + f, k)] = s[mi].channel(f);
                if k > 0 {
                    m[(base + 9 + f, k)] = s[mi].channel(f) - samples[k - 1][mi].channel(f);
                }
            }
        }
        for (slot, &mj) in sgs.iter().filter(|&&mj| mj != mi).enumerate() {
            for (k, s) in samples.iter().enumerate() {
                m[(base + 18 + slot, k)] = (s[mi].delta_deg - s[mj].delta_deg).abs();
            }
        }
        row_names.extend(names.iter().map(|n| format!("{}:{n}", traj.machines[mi].name)));
    }
    Ok(FeatureWindow { matrix: m, row_names, t_clear, raw_width: RAW_WIDTH })
}

fn traj_period(traj: &TrajectoryRecord) -> f64 {
    if traj.times.len() > 1 { traj.times[1] - traj.times[0] } else { 0.0 }
}

/// Row-wise linear interpolation onto [`WIDTH`] points spanning the same
/// interval; both end columns are kept exactly.
pub fn upsample(window: &FeatureWindow) -> Result<FeatureWindow, PredictorError> {
    let raw = &window.matrix;
    if raw.cols != RAW_WIDTH {
        return Err(PredictorError::Shape(format!("upsample expects width {RAW_WIDTH}, got {}", raw.cols)));
    }
    let mut out = Matrix::zeros(raw.rows, WIDTH);
    let scale = (RAW_WIDTH - 1) as f64 / (WIDTH - 1) as f64;
    for j in 0..WIDTH {
        let x = j as f64 * scale;
        let k = (x.floor() as usize).min(RAW_WIDTH - 2);
        let w = x - k as f64;
        for r in 0..raw.rows {
            let (a, b) = (raw[(r, k)], raw[(r, k + 1)]);
            out[(r, j)] = if j == WIDTH - 1 { b } else { a + w * (b - a) };
        }
    }
    Ok(FeatureWindow { matrix: out, ..window.clone() })
}

/// Extracts and upsamples in one go.
pub fn feature_window(traj: &TrajectoryRecord, t_clear: f64) -> Result<FeatureWindow, PredictorError> {
    upsample(&extract_features(traj, t_clear)?)
}

/// Per-row min-max scaling to [0, 1] followed by a 3×3 box blur with
/// replicated edges. Constant rows map to 0.5.
pub fn intensity_map(m: &Matrix) -> Matrix {
    let mut n = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let row = m.row(r);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for c in 0..m.cols {
            n[(r, c)] = if hi > lo { (row[c] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for r in 0..m.rows {
        for c in 0..m.cols {
            let mut s = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    s += n[(clamp(r as isize + dr, m.rows), clamp(c as isize + dc, m.cols))];
                }
            }
            out[(r, c)] = s / 9.0;
        }
    }
    out
}

/// Frequency deviation of the first swing, Hz: the first local extremum of
/// the COI deviation after `t_start`, searched over `span` seconds. Falls
/// back to the largest deviation in the span when no turn occurs.
pub fn first_swing_deviation(traj: &TrajectoryRecord, t_start: f64, span: f64) -> Result<f64, PredictorError> {
    let ks: Vec<usize> =
        (0..traj.times.len()).filter(|&k| traj.times[k] >= t_start - TIME_EPS && traj.times[k] <= t_start + span + TIME_EPS).collect();
    if ks.is_empty() {
        return Err(PredictorError::Window(format!("no COI samples after t = {t_start}")));
    }
    let dev = |k: usize| traj.coi[k] - 1.0;
    let mut best = dev(ks[0]);
    for w in ks.windows(2) {
        let (a, b) = (dev(w[0]), dev(w[1]));
        if b.abs() < a.abs() && a != 0.0 {
            return Ok(a * traj.nominal_freq);
        }
        if b.abs() > best.abs() {
            best = b;
        }
    }
    Ok(best * traj.nominal_freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tds::{MachineInfo, TrajectoryRecord};

    pub(crate) fn synthetic_traj(n: usize, k: usize, f: impl Fn(usize, usize) -> MachineSample) -> TrajectoryRecord {
        TrajectoryRecord {
            times: (0..k).map(|i| i as f64 * 0.008).collect(),
            machines: (0..n)
                .map(|m| MachineInfo { name: format!("G{m}"), kind: MachineKind::Sg, bus: m as u32, h: 1.0, trip_time: None })
                .collect(),
            samples: (0..k).map(|i| (0..n).map(|m| f(i, m)).collect()).collect(),
            coi: vec![1.0; k],
            reference_deg: None,
            nominal_freq: 60.0,
            events: vec![],
            aborted: None,
        }
    }

    fn constant(_: usize, m: usize) -> MachineSample {
        MachineSample { delta_deg: 10.0 + 30.0 * m as f64, omega: 1.0, pg: 0.5, vq: 1.0, ..Default::default() }
    }

    #[test]
    fn constant_run_has_zero_differences() {
        let t = synthetic_traj(3, 100, constant);
        let w = extract_features(&t, 0.6).unwrap();
        assert_eq!((w.matrix.rows, w.matrix.cols), (81, RAW_WIDTH));
        for m in 0..3 {
            for f in 9..18 {
                assert!(w.matrix.row(m * 27 + f).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn angle_rows_hold_pair_differences() {
        let t = synthetic_traj(2, 100, |i, m| MachineSample { delta_deg: i as f64 + if m == 0 { 30.0 } else { 0.0 }, ..Default::default() });
        let w = extract_features(&t, 0.7).unwrap();
        assert!(w.matrix.row(18).iter().all(|v| (*v - 30.0).abs() < 1e-12));
        assert!(w.matrix.row(27 + 18).iter().all(|v| (*v - 30.0).abs() < 1e-12));
        // Unused counterpart slots stay zero.
        assert!(w.matrix.row(19).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn window_ends_at_clearance() {
        let t = synthetic_traj(1, 200, |i, _| MachineSample { omega: i as f64, ..Default::default() });
        // 0.803 s falls between samples 100 and 101.
        let w = extract_features(&t, 0.803).unwrap();
        assert_eq!(w.matrix[(5, RAW_WIDTH - 1)], 100.0);
        assert_eq!(w.matrix[(5, 0)], 39.0);
        assert!(extract_features(&t, 0.4).is_err());
        assert!(extract_features(&t, 5.0).is_err());
    }

    #[test]
    fn shift_equivariant() {
        let t = synthetic_traj(2, 150, |i, m| MachineSample { delta_deg: (i * (m + 1)) as f64, omega: 1.0 + 1e-3 * i as f64, ..Default::default() });
        let mut s = t.clone();
        s.times.iter_mut().for_each(|x| *x += 3.7);
        assert_eq!(extract_features(&t, 0.9).unwrap().matrix, extract_features(&s, 4.6).unwrap().matrix);
    }

    #[test]
    fn too_many_machines_rejected() {
        let t = synthetic_traj(11, 100, constant);
        assert!(extract_features(&t, 0.6).is_err());
    }

    fn raw(rows: usize, f: impl Fn(usize, usize) -> f64) -> FeatureWindow {
        let mut m = Matrix::zeros(rows, RAW_WIDTH);
        for r in 0..rows {
            for c in 0..RAW_WIDTH {
                m[(r, c)] = f(r, c);
            }
        }
        FeatureWindow { matrix: m, row_names: vec![], t_clear: 0.0, raw_width: RAW_WIDTH }
    }

    #[test]
    fn upsample_constant_and_ramp() {
        let u = upsample(&raw(2, |r, c| if r == 0 { 3.0 } else { 2.0 * c as f64 - 1.0 })).unwrap();
        assert_eq!(u.matrix.cols, WIDTH);
        assert!(u.matrix.row(0).iter().all(|v| *v == 3.0));
        for j in 0..WIDTH {
            let x = j as f64 * 61.0 / 249.0;
            assert!((u.matrix[(1, j)] - (2.0 * x - 1.0)).abs() < 1e-12);
        }
        assert_eq!(u.matrix[(1, 0)], -1.0);
        assert_eq!(u.matrix[(1, WIDTH - 1)], 121.0);
        assert!(upsample(&FeatureWindow { matrix: Matrix::zeros(1, 10), ..raw(1, |_, _| 0.0) }).is_err());
    }

    #[test]
    fn upsample_sinusoid_matches_analytic() {
        let dt = 0.008;
        let f = |t: f64| (2.0 * std::f64::consts::PI * 2.0 * t).sin();
        let u = upsample(&raw(1, |_, c| f(c as f64 * dt))).unwrap();
        let span = 61.0 * dt;
        // Linear interpolation error bound h² max|f''| / 8.
        let bound = dt * dt * (4.0 * std::f64::consts::PI).powi(2) / 8.0;
        let mut worst: f64 = 0.0;
        for j in 0..WIDTH {
            let t = j as f64 * span / 249.0;
            worst = worst.max((u.matrix[(0, j)] - f(t)).abs());
        }
        assert!(worst <= bound, "{worst} > {bound}");
    }

    #[test]
    fn intensity_constant_is_half() {
        let mut m = Matrix::zeros(4, 6);
        m.data.iter_mut().for_each(|v| *v = 7.0);
        assert!(intensity_map(&m).data.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn intensity_blur_conserves_interior_mass() {
        let mut m = Matrix::zeros(7, 9);
        m[(3, 4)] = 5.0;
        let i = intensity_map(&m);
        // Normalised: the spike row becomes one-hot, the others 0.5.
        let before = 6.0 * 9.0 * 0.5 + 1.0;
        assert!((i.data.iter().sum::<f64>() - before).abs() < 1e-9);
        assert!(i.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn first_swing_peak() {
        let mut t = synthetic_traj(1, 400, constant);
        for (k, c) in t.coi.iter_mut().enumerate() {
            let x = k as f64 * 0.008 - 1.0;
            *c = 1.0 + if x > 0.0 { 0.01 * (x * 4.0).sin() * (-x).exp() } else { 0.0 };
        }
        let d = first_swing_deviation(&t, 1.0, 2.0).unwrap();
        let peak = t.coi.iter().map(|c| c - 1.0).fold(0.0, f64::max) * 60.0;
        assert_eq!(d, peak);
    }
}
