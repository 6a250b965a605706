//! Probability of transient instability from line fault rates, a bimodal
//! fault-duration density and per-line critical clearing times.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("fault rates sum to zero")]
    ZeroRates,
    #[error("fault rates must be finite and nonnegative")]
    BadRates,
    #[error("line index {0} out of range")]
    Line(usize),
    #[error("duration std must be > 0, got {0}")]
    Std(f64),
    #[error("unit mismatch: CCTs in {cct} but the duration model is in {model}")]
    UnitMismatch { cct: TimeUnit, model: TimeUnit },
    #[error("{ccts} CCTs for {rates} rates")]
    Length { ccts: usize, rates: usize },
    #[error("quadrature step must be > 0")]
    Step,
}

/// Unit of fault durations and CCTs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    /// Cycles at nominal frequency.
    #[default]
    Cycles,
    Seconds,
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeUnit::Cycles => "cycles",
            TimeUnit::Seconds => "seconds",
        })
    }
}

impl TimeUnit {
    /// Converts `v` from `self` to `to`.
    pub fn convert(self, v: f64, to: TimeUnit, nominal_freq: f64) -> f64 {
        match (self, to) {
            (TimeUnit::Seconds, TimeUnit::Cycles) => v * nominal_freq,
            (TimeUnit::Cycles, TimeUnit::Seconds) => v / nominal_freq,
            _ => v,
        }
    }
}

/// Equal-weight mixture of two normals with a shared deviation σ_T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationDistribution {
    pub mean_a: f64,
    pub mean_b: f64,
    pub std: f64,
    #[serde(default)]
    pub time_unit: TimeUnit,
}

impl Default for DurationDistribution {
    fn default() -> Self {
        DurationDistribution { mean_a: 3.5, mean_b: 4.0, std: 0.5, time_unit: TimeUnit::Cycles }
    }
}

fn normal_pdf(x: f64, mu: f64, s: f64) -> f64 {
    let z = (x - mu) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
}

impl DurationDistribution {
    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(RiskError::Std(self.std));
        }
        Ok(())
    }

    pub fn density(&self, tau: f64) -> f64 {
        0.5 * normal_pdf(tau, self.mean_a, self.std) + 0.5 * normal_pdf(tau, self.mean_b, self.std)
    }

    fn density_slope(&self, tau: f64) -> f64 {
        let s2 = self.std * self.std;
        -0.5 * (tau - self.mean_a) / s2 * normal_pdf(tau, self.mean_a, self.std)
            - 0.5 * (tau - self.mean_b) / s2 * normal_pdf(tau, self.mean_b, self.std)
    }

    /// Span holding all but a negligible part of the mass.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = (self.mean_a.min(self.mean_b), self.mean_a.max(self.mean_b));
        (lo - 8.0 * self.std, hi + 8.0 * self.std)
    }

    /// ∫ density over [a, b]: trapezoid rule with the Euler–Maclaurin end
    /// correction, which lifts the error from O(h²) to O(h⁴).
    pub fn integrate(&self, a: f64, b: f64, step: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let n = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (self.density(a) + self.density(b));
        for k in 1..n {
            s += self.density(a + k as f64 * h);
        }
        s * h - h * h / 12.0 * (self.density_slope(b) - self.density_slope(a))
    }

    /// Mass above `cct`; a duration equal to the CCT counts as unstable.
    pub fn tail(&self, cct: f64, step: f64) -> f64 {
        let (lo, hi) = self.support();
        self.integrate(cct.max(lo), hi, step)
    }

    pub fn default_step(&self) -> f64 {
        self.std / 50.0
    }
}

/// P_ℓ(L) = η_ℓ / Σ η.
pub fn line_fault_probability(rates: &[f64], line: usize) -> Result<f64, RiskError> {
    let p = line_fault_probabilities(rates)?;
    p.get(line).copied().ok_or(RiskError::Line(line))
}

pub fn line_fault_probabilities(rates: &[f64]) -> Result<Vec<f64>, RiskError> {
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(RiskError::BadRates);
    }
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) {
        return Err(RiskError::ZeroRates);
    }
    Ok(rates.iter().map(|r| r / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskResult {
    pub line_probability: Vec<f64>,
    /// Duration mass beyond each line's CCT.
    pub tail: Vec<f64>,
    /// P^ℓ(θ) = tail · P_ℓ(L).
    pub contribution: Vec<f64>,
    pub cct: Vec<f64>,
    pub theta: f64,
    /// Set when θ had to be clamped into [0, 1].
    pub clamped: bool,
}

/// θ = Σ_ℓ P_ℓ(L) · P(τ ≥ CCT_ℓ).
pub fn instability_probability(
    cct: &[f64],
    cct_unit: TimeUnit,
    rates: &[f64],
    dist: &DurationDistribution,
    step: Option<f64>,
) -> Result<RiskResult, RiskError> {
    dist.validate()?;
    if cct_unit != dist.time_unit {
        return Err(RiskError::UnitMismatch { cct: cct_unit, model: dist.time_unit });
    }
    if cct.len() != rates.len() {
        return Err(RiskError::Length { ccts: cct.len(), rates: rates.len() });
    }
    let step = step.unwrap_or_else(|| dist.default_step());
    if !(step > 0.0) {
        return Err(RiskError::Step);
    }
    let p = line_fault_probabilities(rates)?;
    let tail: Vec<f64> = cct.iter().map(|&c| dist.tail(c, step)).collect();
    let contribution: Vec<f64> = tail.iter().zip(&p).map(|(t, p)| t * p).collect();
    let raw: f64 = contribution.iter().sum();
    let theta = raw.clamp(0.0, 1.0);
    let clamped = theta != raw;
    if clamped {
        log::warn!("θ = {raw} clamped to {theta}");
    }
    Ok(RiskResult { line_probability: p, tail, contribution, cct: cct.to_vec(), theta, clamped })
}

/// Per-line table as CSV.
pub fn risk_csv(line_ids: &[usize], rates: &[f64], res: &RiskResult) -> String {
    let mut s = String::from("line,rate,p_line,cct,tail,contribution\n");
    for k in 0..res.cct.len() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            line_ids[k], rates[k], res.line_probability[k], res.cct[k], res.tail[k], res.contribution[k]
        ));
    }
    s.push_str(&format!("total,,,,,{}\n", res.theta));
    s
}
