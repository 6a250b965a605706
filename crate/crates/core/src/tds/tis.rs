use super::{TdsError, TrajectoryRecord};
use serde::{Deserialize, Serialize};

/// Transient instability status of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TisLabel {
    /// 0 stable, 1 unstable.
    pub class: u8,
    /// Largest pairwise rotor-angle separation, deg.
    pub lambda_max: f64,
    /// (360 − Λ) / (360 + Λ).
    pub margin: f64,
}

impl TisLabel {
    pub fn from_lambda(lambda_max: f64) -> Self {
        let margin = (360.0 - lambda_max) / (360.0 + lambda_max);
        // A margin of exactly zero counts as unstable.
        TisLabel { class: (margin <= 0.0) as u8, lambda_max, margin }
    }
}

/// Angle spread of sample `k` over surviving machines and the reference.
pub(crate) fn spread_deg(traj: &TrajectoryRecord, k: usize) -> f64 {
    let t = traj.times[k];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, info) in traj.machines.iter().enumerate() {
        if info.alive_at(t) {
            let d = traj.samples[k][m].delta_deg;
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if let Some(r) = traj.reference_deg {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if hi >= lo { hi - lo } else { 0.0 }
}

/// Labels a trajectory by the 360° separation rule on unwrapped angles.
pub fn classify_tis(traj: &TrajectoryRecord) -> TisLabel {
    let n = traj.n_machines();
    // Whole turns added to each raw angle series to keep it continuous.
    let mut offset = vec![0.0; n];
    let mut unwrapped = vec![0.0; n];
    let mut lambda: f64 = 0.0;
    for (k, s) in traj.samples.iter().enumerate() {
        for m in 0..n {
            if k > 0 {
                let prev = traj.samples[k - 1][m].delta_deg;
                let jump = s[m].delta_deg - prev;
                if jump.abs() > 180.0 {
                    offset[m] -= 360.0 * (jump / 360.0).round();
                }
            }
            unwrapped[m] = s[m].delta_deg + offset[m];
        }
        let t = traj.times[k];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, info) in traj.machines.iter().enumerate() {
            if info.alive_at(t) {
                lo = lo.min(unwrapped[m]);
                hi = hi.max(unwrapped[m]);
            }
        }
        if let Some(r) = traj.reference_deg {
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi > lo {
            lambda = lambda.max(hi - lo);
        }
    }
    TisLabel::from_lambda(lambda)
}

/// Inertia-weighted mean speed of the surviving machines per sample.
pub fn coi_frequency(traj: &TrajectoryRecord) -> Result<Vec<f64>, TdsError> {
    traj.samples
        .iter()
        .zip(&traj.times)
        .map(|(s, &t)| {
            let (mut num, mut den) = (0.0, 0.0);
            for (m, info) in traj.machines.iter().enumerate() {
                if info.alive_at(t) {
                    num += info.h * s[m].omega;
                    den += info.h;
                }
            }
            if den > 0.0 { Ok(num / den) } else { Err(TdsError::AllTripped(t)) }
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tds::{MachineInfo, MachineKind, MachineSample};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn synthetic(angles: &[Vec<f64>], omegas: Option<&[Vec<f64>]>, h: &[f64]) -> TrajectoryRecord {
        let n = angles.len();
        let k = angles[0].len();
        TrajectoryRecord {
            times: (0..k).map(|i| i as f64 * 0.008).collect(),
            machines: (0..n)
                .map(|m| MachineInfo { name: format!("M{m}"), kind: MachineKind::Sg, bus: m as u32, h: h[m], trip_time: None })
                .collect(),
            samples: (0..k)
                .map(|i| {
                    (0..n)
                        .map(|m| MachineSample {
                            delta_deg: angles[m][i],
                            omega: omegas.map_or(1.0, |o| o[m][i]),
                            ..Default::default()
                        })
                        .collect()
                })
                .collect(),
            coi: vec![1.0; k],
            reference_deg: None,
            nominal_freq: 60.0,
            events: vec![],
            aborted: None,
        }
    }

    #[test]
    fn identical_angles_are_stable() {
        let t = synthetic(&[vec![10.0; 5], vec![10.0; 5]], None, &[1.0, 1.0]);
        let l = classify_tis(&t);
        assert_eq!((l.class, l.lambda_max, l.margin), (0, 0.0, 1.0));
    }

    #[test]
    fn separation_of_720_is_unstable() {
        let l = TisLabel::from_lambda(720.0);
        assert!((l.margin + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.class, 1);
    }

    #[test]
    fn boundary_is_unstable() {
        assert_eq!(TisLabel::from_lambda(360.0).class, 1);
        assert_eq!(TisLabel::from_lambda(359.999).class, 0);
    }

    /// Direct scan of every pair at every sample.
    fn brute_force(angles: &[Vec<f64>]) -> f64 {
        let mut best: f64 = 0.0;
        for k in 0..angles[0].len() {
            for a in angles {
                for b in angles {
                    best = best.max((a[k] - b[k]).abs());
                }
            }
        }
        best
    }

    pub(crate) fn random_angles(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let n = rng.gen_range(2..12);
        let k = rng.gen_range(2..200);
        (0..n)
            .map(|_| {
                let mut d = rng.gen_range(-90.0..90.0);
                let drift = rng.gen_range(-8.0..8.0);
                (0..k)
                    .map(|_| {
                        d += drift + rng.gen_range(-20.0..20.0);
                        d
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random_angles(&mut rng);
            let h = vec![1.0; a.len()];
            let l = classify_tis(&synthetic(&a, None, &h));
            let oracle = brute_force(&a);
            assert_eq!(l.lambda_max, oracle);
            assert_eq!(l.class, TisLabel::from_lambda(oracle).class);
        }
    }

    #[test]
    fn coi_symmetric_pair() {
        let t = synthetic(&[vec![0.0], vec![0.0]], Some(&[vec![0.99], vec![1.01]]), &[3.0, 3.0]);
        assert!((coi_frequency(&t).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn invariant_to_common_shift(seed in 0u64..1000, c in -1e3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_angles(&mut rng);
            let h = vec![1.0; a.len()];
            let t = synthetic(&a, None, &h);
            let mut s = t.clone();
            s.shift_angles(c);
            let (l1, l2) = (classify_tis(&t), classify_tis(&s));
            prop_assert_eq!(l1.class, l2.class);
            prop_assert!((l1.lambda_max - l2.lambda_max).abs() < 1e-9);
        }
    }
}
