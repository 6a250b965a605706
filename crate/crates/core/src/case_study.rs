//! Side-by-side run of the conventional schedule and the prediction-driven
//! robust schedule on one scripted contingency.

use crate::dispatch::{evaluate_cost, solve_vis, DispatchInput, DispatchSolution};
use crate::grid::GridCase;
use crate::igdt::{compute_ace, estimate_interrupted_load, solve_robust_vis, AceInput, RobustInput};
use crate::predictor::{
    feature_window, first_swing_deviation, predict_frequency_deviation, CnnAtt, FrequencyPrediction, Mlp,
    FIRST_SWING_SPAN,
};
use crate::risk::{instability_probability, DurationDistribution, TimeUnit};
use crate::tds::{
    classify_tis, compute_cct, linearize_eigenvalues, simulate, FaultScenario, GeneratorTrip, SimConfig, TisLabel,
    TrajectoryRecord,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write;

/// The contingency replayed on both schedules, with the study's economics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyScript {
    pub line: usize,
    pub location: f64,
    /// s.
    pub fault_start: f64,
    /// Fault duration τ, s.
    pub duration: f64,
    #[serde(default)]
    pub generator_trip: Option<GeneratorTrip>,
    /// Simulated span, s.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Allowed |COI − 1|, pu, for a branch to count as recovered.
    #[serde(default = "default_band")]
    pub recovery_band: f64,
    /// Seconds after fault onset by which the COI must stay in the band.
    #[serde(default = "default_deadline")]
    pub recovery_deadline: f64,
    /// C_c, $.
    pub critical_cost: f64,
    /// ΔP_tie, pu.
    #[serde(default)]
    pub tie_flow_change: f64,
    /// $/MWh.
    #[serde(default = "default_shed_price")]
    pub shed_price: f64,
    /// Hours the shed load stays off.
    #[serde(default = "default_restoration")]
    pub restoration_hours: f64,
    #[serde(default = "default_sigma_cap")]
    pub sigma_cap: f64,
}

fn default_horizon() -> f64 {
    15.0
}
fn default_band() -> f64 {
    0.02
}
fn default_deadline() -> f64 {
    12.0
}
fn default_shed_price() -> f64 {
    1000.0
}
fn default_restoration() -> f64 {
    1.0
}
fn default_sigma_cap() -> f64 {
    2.0
}

impl ContingencyScript {
    pub fn scenario(&self) -> FaultScenario {
        FaultScenario {
            line: self.line,
            duration: self.duration,
            location: self.location,
            load_scale: 1.0,
            fault_start: self.fault_start,
            generator_trip: self.generator_trip,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { horizon: self.horizon, ..SimConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineRate {
    pub line: usize,
    /// Faults per year.
    pub rate: f64,
}

/// Lines that enter θ, their fault rates and the duration model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    #[serde(default)]
    pub distribution: DurationDistribution,
    pub lines: Vec<LineRate>,
    /// Search interval for each line's CCT, s.
    #[serde(default = "default_bracket")]
    pub cct_bracket: (f64, f64),
}

fn default_bracket() -> (f64, f64) {
    (0.0, 1.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchOutcome {
    /// $.
    pub dispatch_cost: Option<f64>,
    /// $.
    pub ufls_cost: f64,
    /// dispatch_cost + ufls_cost, $.
    pub total: Option<f64>,
    pub tis: Option<TisLabel>,
    /// Seconds after fault onset from which the COI stays in the band.
    /// Only for class 0 runs.
    pub recovery_time: Option<f64>,
    /// Load charged as shed, pu.
    pub shed_load: f64,
    /// First-swing COI deviation seen in the run, Hz.
    pub observed_delta_f: Option<f64>,
    /// Stage and error text when the branch could not finish.
    pub failure: Option<String>,
}

impl BranchOutcome {
    fn fail(&mut self, stage: &str, err: impl std::fmt::Display) {
        log::warn!("{stage}: {err}");
        self.failure = Some(format!("{stage}: {err}"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    /// P_d, pu.
    pub demand: f64,
    pub conventional: BranchOutcome,
    pub proposed: BranchOutcome,
    pub prediction: Option<FrequencyPrediction>,
    pub ace: Option<f64>,
    /// P̂_d, pu.
    pub predicted_load: Option<f64>,
    /// (line, CCT s) under the conventional schedule.
    pub line_cct: Vec<(usize, f64)>,
    pub theta: Option<f64>,
    pub sigma_star: Option<f64>,
    pub budget: Option<f64>,
    pub feasibility_capped: Option<bool>,
}

/// Everything a study run produces.
#[derive(Debug, Clone)]
pub struct CaseStudyOutput {
    pub report: CaseStudyReport,
    pub conventional_dispatch: Option<DispatchSolution>,
    pub robust_dispatch: Option<DispatchSolution>,
    pub conventional_run: Option<TrajectoryRecord>,
    pub proposed_run: Option<TrajectoryRecord>,
    pub conventional_eigenvalues: Option<Vec<Complex64>>,
    pub proposed_eigenvalues: Option<Vec<Complex64>>,
}

/// Seconds after `t_start` from which |COI − 1| ≤ band holds to the end.
pub fn recovery_time(traj: &TrajectoryRecord, t_start: f64, band: f64) -> Option<f64> {
    let last_out = traj.coi.iter().rposition(|c| (c - 1.0).abs() > band);
    match last_out {
        None => Some(0.0),
        Some(k) if k + 1 < traj.times.len() => Some((traj.times[k + 1] - t_start).max(0.0)),
        Some(_) => None,
    }
}

/// CCT of each listed line under `dispatch`, placing the fault as in
/// `template` (its line, duration and generator trip are ignored). A line
/// that stays stable over the whole bracket gets the upper end.
pub fn line_ccts(
    case: &GridCase,
    dispatch: &DispatchSolution,
    template: &FaultScenario,
    risk: &RiskConfig,
) -> Result<Vec<(usize, f64)>, String> {
    let cfg = SimConfig { stop_on_separation: true, ..SimConfig::default() };
    let (lo, hi) = risk.cct_bracket;
    risk.lines
        .par_iter()
        .map(|lr| {
            let base = FaultScenario { line: lr.line, generator_trip: None, ..*template };
            let top = simulate(case, dispatch, &FaultScenario { duration: hi, ..base }, &cfg).map_err(|e| e.to_string())?;
            if classify_tis(&top).class == 0 {
                return Ok((lr.line, hi));
            }
            let cct = compute_cct(case, dispatch, &base, &cfg, (lo, hi), None).map_err(|e| format!("line {}: {e}", lr.line))?;
            Ok((lr.line, cct))
        })
        .collect()
}

/// Classifies a run and charges shed load when it is unstable.
fn settle(out: &mut BranchOutcome, traj: &TrajectoryRecord, case: &GridCase, script: &ContingencyScript) {
    let tis = classify_tis(traj);
    out.tis = Some(tis);
    out.observed_delta_f = first_swing_deviation(traj, script.fault_start, FIRST_SWING_SPAN).ok();
    if tis.class == 0 {
        out.recovery_time = recovery_time(traj, script.fault_start, script.recovery_band);
    } else {
        let ace = out.observed_delta_f.map(|df| {
            compute_ace(&AceInput {
                tie_flow_change: script.tie_flow_change,
                frequency_bias: case.system.frequency_bias,
                frequency_deviation: df,
            })
        });
        match ace {
            Some(Ok(a)) => {
                out.shed_load = a.abs();
                out.ufls_cost = a.abs() * case.system.base_power * script.restoration_hours * script.shed_price;
            }
            Some(Err(e)) => out.fail("shed estimate", e),
            None => out.fail("shed estimate", "no first swing in the run"),
        }
    }
    out.total = out.dispatch_cost.map(|c| c + out.ufls_cost);
}

/// Runs both branches. Stage failures are recorded in the report rather
/// than returned.
pub fn run_case_study(
    case: &GridCase,
    classifier: &CnnAtt,
    regressor: &Mlp,
    script: &ContingencyScript,
    risk: &RiskConfig,
    dispatch_tol: f64,
) -> CaseStudyOutput {
    let demand = case.total_demand();
    let scn = script.scenario();
    let cfg = script.sim_config();
    let mut out = CaseStudyOutput {
        report: CaseStudyReport {
            demand,
            conventional: BranchOutcome::default(),
            proposed: BranchOutcome::default(),
            prediction: None,
            ace: None,
            predicted_load: None,
            line_cct: vec![],
            theta: None,
            sigma_star: None,
            budget: None,
            feasibility_capped: None,
        },
        conventional_dispatch: None,
        robust_dispatch: None,
        conventional_run: None,
        proposed_run: None,
        conventional_eigenvalues: None,
        proposed_eigenvalues: None,
    };
    let rep = &mut out.report;

    // Conventional schedule.
    let base = match solve_vis(case, &DispatchInput::nominal(case), dispatch_tol) {
        Ok(s) => s,
        Err(e) => {
            rep.conventional.fail("dispatch", &e);
            rep.proposed.fail("dispatch", e);
            return out;
        }
    };
    rep.conventional.dispatch_cost = Some(evaluate_cost(&base, case));
    out.conventional_eigenvalues = linearize_eigenvalues(case, &base).ok();
    let run_a = match simulate(case, &base, &scn, &cfg) {
        Ok(t) => t,
        Err(e) => {
            rep.conventional.fail("simulation", &e);
            rep.proposed.fail("early measurements", e);
            out.conventional_dispatch = Some(base);
            return out;
        }
    };
    settle(&mut rep.conventional, &run_a, case, script);

    // Proposed schedule: early window → Δf → P̂_d, CCTs → θ, then IGDT.
    let proposed = (|| -> Result<(DispatchSolution, TrajectoryRecord), (&'static str, String)> {
        let window = feature_window(&run_a, scn.clear_time()).map_err(|e| ("window", e.to_string()))?;
        let pred = predict_frequency_deviation(regressor, classifier, &window).map_err(|e| ("prediction", e.to_string()))?;
        rep.prediction = Some(pred);
        // Below the confidence gate the schedule keeps the forecast demand.
        let p_hat = match pred {
            FrequencyPrediction::Value { delta_f, .. } => {
                let ace = compute_ace(&AceInput {
                    tie_flow_change: script.tie_flow_change,
                    frequency_bias: case.system.frequency_bias,
                    frequency_deviation: delta_f,
                })
                .map_err(|e| ("ACE", e.to_string()))?;
                rep.ace = Some(ace);
                estimate_interrupted_load(demand, ace).map_err(|e| ("interrupted load", e.to_string()))?
            }
            FrequencyPrediction::NoPrediction { .. } => demand,
        };
        rep.predicted_load = Some(p_hat);

        let ccts = line_ccts(case, &base, &scn, risk).map_err(|e| ("CCT", e))?;
        rep.line_cct = ccts.clone();
        let unit = risk.distribution.time_unit;
        let f_nom = case.system.nominal_freq;
        let converted: Vec<f64> = ccts.iter().map(|&(_, c)| TimeUnit::Seconds.convert(c, unit, f_nom)).collect();
        let rates: Vec<f64> = risk.lines.iter().map(|l| l.rate).collect();
        let risk_res = instability_probability(&converted, unit, &rates, &risk.distribution, None)
            .map_err(|e| ("risk", e.to_string()))?;
        rep.theta = Some(risk_res.theta);

        let input = RobustInput {
            predicted_load: p_hat,
            collapse_probability: risk_res.theta,
            critical_cost: script.critical_cost,
            sigma_cap: script.sigma_cap,
        };
        let robust = solve_robust_vis(case, &input, crate::igdt::DEFAULT_SIGMA_TOL, dispatch_tol)
            .map_err(|e| ("robust dispatch", e.to_string()))?;
        rep.sigma_star = Some(robust.sigma_star);
        rep.budget = Some(robust.budget);
        rep.feasibility_capped = Some(robust.feasibility_capped);
        let sol = robust.robust_dispatch;
        let run = simulate(case, &sol, &scn, &cfg).map_err(|e| ("simulation", e.to_string()))?;
        Ok((sol, run))
    })();
    match proposed {
        Ok((sol, run)) => {
            rep.proposed.dispatch_cost = Some(evaluate_cost(&sol, case));
            settle(&mut rep.proposed, &run, case, script);
            out.proposed_eigenvalues = linearize_eigenvalues(case, &sol).ok();
            out.robust_dispatch = Some(sol);
            out.proposed_run = Some(run);
        }
        Err((stage, e)) => rep.proposed.fail(stage, e),
    }
    out.conventional_dispatch = Some(base);
    out.conventional_run = Some(run_a);
    out
}

/// `branch,re,im` rows.
pub fn eigenvalue_csv(branches: &[(&str, &[Complex64])]) -> String {
    let mut s = String::from("branch,re,im\n");
    for (name, ev) in branches {
        for l in *ev {
            writeln!(s, "{name},{},{}", l.re, l.im).unwrap();
        }
    }
    s
}

/// Human-readable summary of a report.
pub fn report_text(r: &CaseStudyReport) -> String {
    let mut s = String::new();
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    for (name, b) in [("conventional", &r.conventional), ("proposed", &r.proposed)] {
        let class = b.tis.map_or("n/a".into(), |t| t.class.to_string());
        writeln!(
            s,
            "{name}: dispatch {} ufls {:.4} total {} class {class} recovery {}{}",
            opt(b.dispatch_cost),
            b.ufls_cost,
            opt(b.total),
            opt(b.recovery_time),
            b.failure.as_ref().map_or(String::new(), |f| format!(" FAILED ({f})"))
        )
        .unwrap();
    }
    writeln!(s, "P_d {:.4} P̂_d {} θ {} σ* {}", r.demand, opt(r.predicted_load), opt(r.theta), opt(r.sigma_star)).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tds::{MachineInfo, MachineKind, MachineSample};

    fn coi_only(coi: Vec<f64>) -> TrajectoryRecord {
        let k = coi.len();
        TrajectoryRecord {
            times: (0..k).map(|i| i as f64).collect(),
            machines: vec![MachineInfo { name: "G".into(), kind: MachineKind::Sg, bus: 1, h: 1.0, trip_time: None }],
            samples: vec![vec![MachineSample::default()]; k],
            coi,
            reference_deg: None,
            nominal_freq: 60.0,
            events: vec![],
            aborted: None,
        }
    }

    #[test]
    fn recovery_is_last_exit_from_band() {
        let t = coi_only(vec![1.0, 1.05, 0.97, 1.01, 1.0]);
        assert_eq!(recovery_time(&t, 1.0, 0.02), Some(2.0));
        assert_eq!(recovery_time(&coi_only(vec![1.0, 1.0, 1.1]), 0.0, 0.02), None);
        assert_eq!(recovery_time(&coi_only(vec![1.0; 3]), 0.0, 0.02), Some(0.0));
    }

    #[test]
    fn script_round_trips_with_defaults() {
        let s: ContingencyScript =
            serde_json::from_str(r#"{"line": 33, "location": 0.95, "fault_start": 2.0, "duration": 0.15, "critical_cost": 460.0}"#)
                .unwrap();
        assert_eq!(s.horizon, 15.0);
        assert_eq!(s.shed_price, 1000.0);
        assert_eq!(s.scenario().load_scale, 1.0);
        let back: ContingencyScript = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn eigen_csv_rows() {
        let ev = [Complex64::new(-1.0, 2.0)];
        assert_eq!(eigenvalue_csv(&[("a", &ev)]), "branch,re,im\na,-1,2\n");
    }
}
