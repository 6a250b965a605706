use crate::args::*;
use crate::manifest::{sha256_hex, Run};
use crate::svg;
use serde::Serialize;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use vis_core::case_study::{eigenvalue_csv, line_ccts, report_text, run_case_study, ContingencyScript, RiskConfig};
use vis_core::dispatch::{check_feasibility, solve_vis, variable_names, DispatchInput, DispatchSolution};
use vis_core::grid::{bundled, bundled_names, GridCase};
use vis_core::igdt::{robust_report, solve_robust_vis, RobustInput};
use vis_core::predictor::{
    build_dataset, majority_baseline, read_dataset, train_classifier, train_regressor, write_dataset, CnnAtt, Mlp,
    TrainConfig,
};
use vis_core::risk::{instability_probability, risk_csv, TimeUnit};
use vis_core::tds::io::{coi_csv, events_csv, trajectory_csv};
use vis_core::tds::{
    classify_tis, compute_cct, linearize_eigenvalues, simulate, sweep_map, FaultScenario, GeneratorTrip, SimConfig,
    SweepRanges, TrajectoryRecord,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flag value; exit code 2.
    Usage(String),
    /// The pipeline refused or failed; exit code 1.
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
        }
    }
}

fn domain(e: impl Display) -> CliError {
    CliError::Domain(e.to_string())
}

type Res<T> = Result<T, CliError>;

/// Case file path or bundled name, with the digest of its canonical JSON.
pub fn load_case(spec: &str) -> Res<(GridCase, String)> {
    let case = if Path::new(spec).is_file() {
        vis_core::grid::load_case(spec).map_err(domain)?
    } else if bundled_names().any(|n| n == spec) {
        bundled(spec).map_err(domain)?
    } else {
        let names: Vec<&str> = bundled_names().collect();
        return Err(CliError::Usage(format!("--case {spec}: no such file or bundled case ({})", names.join(", "))));
    };
    let digest = sha256_hex(case.to_json().as_bytes());
    Ok((case, digest))
}

fn read_json<T: serde::de::DeserializeOwned>(flag: &str, path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{flag} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn io(e: std::io::Error) -> CliError {
    domain(e)
}

fn nominal(case: &GridCase, tol: f64) -> Res<DispatchSolution> {
    solve_vis(case, &DispatchInput::nominal(case), tol).map_err(domain)
}

fn scenario(case: &GridCase, f: &FaultArgs) -> Res<FaultScenario> {
    let line = match f.line {
        Some(l) => l,
        None => case.lines.iter().find(|l| l.is_in_service()).map(|l| l.id).ok_or_else(|| domain("case has no in-service line"))?,
    };
    let generator_trip = match (f.trip_machine, f.trip_time) {
        (Some(machine), Some(time)) => Some(GeneratorTrip { machine, time }),
        (None, None) => None,
        _ => return Err(CliError::Usage("--trip-machine and --trip-time go together".into())),
    };
    Ok(FaultScenario { line, duration: f.tau, location: f.location, load_scale: f.load_scale, fault_start: f.fault_start, generator_trip })
}

fn coi_points(t: &TrajectoryRecord) -> Vec<(f64, f64)> {
    t.times.iter().zip(&t.coi).map(|(&a, &b)| (a, b)).collect()
}

pub fn run(cli: &Cli, run: &mut Run) -> Res<()> {
    let (case, _) = load_case(&cli.case)?;
    let tol = cli.tol;
    match &cli.command {
        Command::Simulate(f) => {
            let scn = scenario(&case, f)?;
            let sol = nominal(&case, tol)?;
            let traj = simulate(&case, &sol, &scn, &SimConfig { horizon: f.horizon, ..SimConfig::default() }).map_err(domain)?;
            let label = classify_tis(&traj);
            run.write("trajectory.csv", trajectory_csv(&traj)).map_err(io)?;
            run.write("events.csv", events_csv(&traj)).map_err(io)?;
            run.write("coi.csv", coi_csv(&traj)).map_err(io)?;
            #[derive(Serialize)]
            struct Summary {
                scenario: FaultScenario,
                class: u8,
                lambda_max: f64,
                margin: f64,
                max_speed_deviation: f64,
                samples: usize,
            }
            let s = Summary {
                scenario: scn,
                class: label.class,
                lambda_max: label.lambda_max,
                margin: label.margin,
                max_speed_deviation: traj.max_speed_deviation(),
                samples: traj.times.len(),
            };
            run.write("simulation.json", json(&s)).map_err(io)?;
            run.write("coi.svg", svg::line_plot("COI speed", "t [s]", "pu", &[("COI", coi_points(&traj))])).map_err(io)?;
            println!("class {} Λ {:.2}° max |ω−1| {:.3e}", label.class, label.lambda_max, s.max_speed_deviation);
        }
        Command::Cct(a) => {
            let scn = scenario(&case, &a.fault)?;
            let sol = nominal(&case, tol)?;
            let cfg = SimConfig { horizon: a.fault.horizon, ..SimConfig::default() };
            let cct = compute_cct(&case, &sol, &scn, &cfg, (a.lo, a.hi), None).map_err(domain)?;
            #[derive(Serialize)]
            struct Out {
                line: usize,
                location: f64,
                load_scale: f64,
                cct: f64,
                bracket: (f64, f64),
            }
            run.write("cct.json", json(&Out { line: scn.line, location: scn.location, load_scale: scn.load_scale, cct, bracket: (a.lo, a.hi) }))
                .map_err(io)?;
            println!("CCT {cct:.5} s");
        }
        Command::Sweep(a) => {
            let (scns, sol) = sweep_setup(&case, a, cli.seed, tol)?;
            let items = sweep_map(&case, &sol, &scns, cli.seed, &SimConfig::default(), |_, t| Ok(classify_tis(&t)));
            let mut text = String::new();
            let mut unstable = 0;
            for it in &items {
                let line = match &it.result {
                    Ok(l) => {
                        unstable += l.class as usize;
                        serde_json::json!({"index": it.index, "seed": it.seed, "scenario": it.scenario, "class": l.class, "lambda_max": l.lambda_max})
                    }
                    Err(e) => serde_json::json!({"index": it.index, "seed": it.seed, "scenario": it.scenario, "error": e}),
                };
                text.push_str(&line.to_string());
                text.push('\n');
            }
            run.write("sweep_manifest.jsonl", text).map_err(io)?;
            println!("{} scenarios, {unstable} unstable", items.len());
        }
        Command::Dataset(a) => {
            let (scns, sol) = sweep_setup(&case, a, cli.seed, tol)?;
            let items = build_dataset(&case, &sol, &scns, cli.seed, &SimConfig::default());
            let failed = items.iter().filter(|i| i.result.is_err()).count();
            let records: Vec<_> = items.into_iter().filter_map(|i| i.result.ok()).collect();
            if records.is_empty() {
                return Err(domain("every scenario failed"));
            }
            write_dataset(&run.dir.join("dataset.jsonl"), &records).map_err(domain)?;
            run.adopt("dataset.jsonl").map_err(io)?;
            run.adopt("dataset.bin").map_err(io)?;
            let unstable = records.iter().filter(|r| r.label == 1).count();
            println!("{} records ({unstable} unstable), {failed} failed", records.len());
        }
        Command::Train(a) => {
            let records = read_dataset(&a.dataset).map_err(domain)?;
            let mut ccfg = TrainConfig { seed: cli.seed, ..TrainConfig::classifier_default() };
            let mut rcfg = TrainConfig { seed: cli.seed, ..TrainConfig::regressor_default() };
            if let Some(e) = a.classifier_epochs {
                ccfg.epochs = e;
            }
            if let Some(e) = a.regressor_epochs {
                rcfg.epochs = e;
            }
            let (clf, crep) = train_classifier(&records, &ccfg).map_err(domain)?;
            let (reg, rrep) = train_regressor(&records, &rcfg).map_err(domain)?;
            run.write("classifier.json", clf.to_json()).map_err(io)?;
            run.write("regressor.json", reg.to_json()).map_err(io)?;
            let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
            let summary = serde_json::json!({
                "records": records.len(),
                "majority_baseline": majority_baseline(&labels),
                "classifier": crep,
                "regressor": rrep,
            });
            run.write("training.json", json(&summary)).map_err(io)?;
            println!("classifier holdout accuracy {:.4}, regressor holdout RMSE {:.4} Hz", crep.holdout_metric, rrep.holdout_metric);
        }
        Command::Dispatch(a) => {
            let input = match a.demand {
                Some(d) => DispatchInput::at_demand(&case, d),
                None => DispatchInput::nominal(&case),
            };
            let sol = solve_vis(&case, &input, tol).map_err(domain)?;
            run.write("dispatch.json", json(&sol)).map_err(io)?;
            let mut txt = format!("demand = {}\ncost = {}\n", input.demand, sol.total_cost);
            for (n, v) in variable_names(&case).iter().zip(sol.to_vector()) {
                txt.push_str(&format!("{n} = {v}\n"));
            }
            for v in check_feasibility(&sol, &input, &case) {
                txt.push_str(&format!("violation {} = {}\n", v.constraint, v.amount));
            }
            run.write("dispatch.txt", txt).map_err(io)?;
            println!("cost {:.4}", sol.total_cost);
        }
        Command::Robust(a) => {
            let input = RobustInput {
                predicted_load: a.predicted_load.unwrap_or_else(|| case.total_demand()),
                collapse_probability: a.theta,
                critical_cost: a.cc,
                sigma_cap: a.sigma_cap,
            };
            let res = solve_robust_vis(&case, &input, a.sigma_tol, tol).map_err(domain)?;
            run.write("robust.txt", robust_report(&input, &res)).map_err(io)?;
            run.write("robust.json", json(&res)).map_err(io)?;
            run.write("robust_dispatch.json", json(&res.robust_dispatch)).map_err(io)?;
            println!("σ* {:.6} cost {:.4} budget {:.4}", res.sigma_star, res.worst_case_cost, res.budget);
        }
        Command::Risk(a) => {
            let cfg: RiskConfig = read_json("--config", &a.config)?;
            let sol = nominal(&case, tol)?;
            let template = FaultScenario {
                line: 0,
                duration: 0.0,
                location: a.location,
                load_scale: 1.0,
                fault_start: a.fault_start,
                generator_trip: None,
            };
            let ccts = line_ccts(&case, &sol, &template, &cfg).map_err(domain)?;
            let unit = cfg.distribution.time_unit;
            let conv: Vec<f64> = ccts.iter().map(|&(_, c)| TimeUnit::Seconds.convert(c, unit, case.system.nominal_freq)).collect();
            let rates: Vec<f64> = cfg.lines.iter().map(|l| l.rate).collect();
            let res = instability_probability(&conv, unit, &rates, &cfg.distribution, None).map_err(domain)?;
            let ids: Vec<usize> = cfg.lines.iter().map(|l| l.line).collect();
            run.write("risk.csv", risk_csv(&ids, &rates, &res)).map_err(io)?;
            run.write("risk.json", json(&res)).map_err(io)?;
            println!("θ {:.6}", res.theta);
        }
        Command::Eigen(a) => {
            let sol: DispatchSolution = match &a.dispatch {
                Some(p) => read_json("--dispatch", p)?,
                None => nominal(&case, tol)?,
            };
            let ev = linearize_eigenvalues(&case, &sol).map_err(domain)?;
            run.write("eigenvalues.csv", eigenvalue_csv(&[("schedule", &ev)])).map_err(io)?;
            let pts = ev.iter().map(|l| (l.re, l.im)).collect();
            run.write("eigenvalues.svg", svg::scatter("Eigenvalues", "Re", "Im", &[("schedule", pts)])).map_err(io)?;
            let zero = ev.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
            let worst = ev.iter().filter(|l| l.norm() > 1e-8).map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
            println!("{} eigenvalues, smallest |λ| {zero:.3e}, largest nonzero real part {worst:.6}", ev.len());
        }
        Command::CaseStudy(a) => {
            let script: ContingencyScript = read_json("--script", &a.script)?;
            let risk: RiskConfig = read_json("--risk", &a.risk)?;
            let clf = CnnAtt::from_json(&fs::read_to_string(&a.classifier).map_err(|e| CliError::Usage(format!("--classifier: {e}")))?)
                .map_err(domain)?;
            let reg = Mlp::from_json(&fs::read_to_string(&a.regressor).map_err(|e| CliError::Usage(format!("--regressor: {e}")))?)
                .map_err(domain)?;
            let out = run_case_study(&case, &clf, &reg, &script, &risk, tol);
            run.write("report.json", json(&out.report)).map_err(io)?;
            run.write("report.txt", report_text(&out.report)).map_err(io)?;
            let mut series = vec![];
            if let Some(t) = &out.conventional_run {
                run.write("coi_conventional.csv", coi_csv(t)).map_err(io)?;
                series.push(("conventional", coi_points(t)));
            }
            if let Some(t) = &out.proposed_run {
                run.write("coi_proposed.csv", coi_csv(t)).map_err(io)?;
                series.push(("proposed", coi_points(t)));
            }
            run.write("coi.svg", svg::line_plot("COI speed", "t [s]", "pu", &series)).map_err(io)?;
            let mut eig: Vec<(&str, &[num_complex::Complex64])> = vec![];
            if let Some(e) = &out.conventional_eigenvalues {
                eig.push(("conventional", e));
            }
            if let Some(e) = &out.proposed_eigenvalues {
                eig.push(("proposed", e));
            }
            run.write("eigenvalues.csv", eigenvalue_csv(&eig)).map_err(io)?;
            let pts: Vec<(&str, Vec<(f64, f64)>)> = eig.iter().map(|(n, e)| (*n, e.iter().map(|l| (l.re, l.im)).collect())).collect();
            run.write("eigenvalues.svg", svg::scatter("Eigenvalues", "Re", "Im", &pts)).map_err(io)?;
            print!("{}", report_text(&out.report));
            let failures: Vec<&String> =
                [&out.report.conventional.failure, &out.report.proposed.failure].into_iter().flatten().collect();
            if !failures.is_empty() {
                return Err(domain(format!("case study incomplete: {failures:?}")));
            }
        }
    }
    Ok(())
}

fn sweep_setup(case: &GridCase, a: &SweepArgs, seed: u64, tol: f64) -> Res<(Vec<FaultScenario>, DispatchSolution)> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let ranges: SweepRanges = match &a.ranges {
        Some(p) => read_json("--ranges", p)?,
        None => SweepRanges::default(),
    };
    ranges.validate(case).map_err(domain)?;
    Ok((ranges.draw(case, a.count, seed), nominal(case, tol)?))
}
