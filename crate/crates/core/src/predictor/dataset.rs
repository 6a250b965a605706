use super::{feature_window, first_swing_deviation, Matrix, PredictorError};
use crate::dispatch::DispatchSolution;
use crate::grid::GridCase;
use crate::tds::{classify_tis, sweep_map, FaultScenario, SimConfig, SweepItem, TisLabel, TrajectoryRecord};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

/// Seconds after fault onset searched for the first swing.
pub const FIRST_SWING_SPAN: f64 = 2.0;

/// One labelled window. The window values live in a binary sidecar on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: usize,
    pub seed: u64,
    pub scenario: FaultScenario,
    pub label: u8,
    /// Largest angle separation of the source run, deg.
    pub lambda_max: f64,
    /// First-swing COI frequency deviation, Hz.
    pub delta_f: f64,
    pub rows: usize,
    pub cols: usize,
    /// Upsampled raw window, row-major.
    #[serde(skip)]
    pub window: Vec<f32>,
}

/// JSONL line: the record plus where its window sits in the sidecar.
#[derive(Serialize, Deserialize)]
struct Line {
    #[serde(flatten)]
    record: DatasetRecord,
    sidecar: String,
    offset: u64,
}

impl DatasetRecord {
    pub fn from_trajectory(id: usize, seed: u64, scenario: &FaultScenario, traj: &TrajectoryRecord) -> Result<Self, PredictorError> {
        let w = feature_window(traj, scenario.clear_time())?;
        let label = classify_tis(traj);
        Ok(DatasetRecord {
            id,
            seed,
            scenario: *scenario,
            label: label.class,
            lambda_max: label.lambda_max,
            delta_f: first_swing_deviation(traj, scenario.fault_start, FIRST_SWING_SPAN)?,
            rows: w.matrix.rows,
            cols: w.matrix.cols,
            window: w.matrix.data.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn window_matrix(&self) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.window.iter().map(|&v| v as f64).collect() }
    }

    /// The stored label must follow from the stored separation.
    pub fn check_label(&self) -> Result<(), PredictorError> {
        if TisLabel::from_lambda(self.lambda_max).class != self.label {
            return Err(PredictorError::Dataset(format!("record {}: label {} contradicts Λ = {}", self.id, self.label, self.lambda_max)));
        }
        Ok(())
    }
}

/// Simulates every scenario in parallel and turns each run into a record.
pub fn build_dataset(
    case: &GridCase,
    dispatch: &DispatchSolution,
    scenarios: &[FaultScenario],
    seed: u64,
    cfg: &SimConfig,
) -> Vec<SweepItem<DatasetRecord>> {
    let mut items = sweep_map(case, dispatch, scenarios, seed, cfg, |scn, traj| {
        DatasetRecord::from_trajectory(0, seed, scn, &traj).map_err(|e| e.to_string())
    });
    for it in &mut items {
        if let Ok(r) = &mut it.result {
            r.id = it.index;
        }
    }
    items
}

/// Writes `<path>` (one JSON record per line) and the window sidecar next to
/// it with the extension `bin` (f32, little-endian, row-major).
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), PredictorError> {
    let side = path.with_extension("bin");
    let side_name = side.file_name().and_then(|s| s.to_str()).unwrap_or("dataset.bin").to_string();
    let mut jl = BufWriter::new(fs::File::create(path)?);
    let mut bin = BufWriter::new(fs::File::create(&side)?);
    let mut offset = 0u64;
    for r in records {
        if r.window.len() != r.rows * r.cols {
            return Err(PredictorError::Shape(format!("record {} window length", r.id)));
        }
        let line = Line { record: r.clone(), sidecar: side_name.clone(), offset };
        serde_json::to_writer(&mut jl, &line)?;
        jl.write_all(b"\n")?;
        for v in &r.window {
            bin.write_all(&v.to_le_bytes())?;
        }
        offset += 4 * r.window.len() as u64;
    }
    jl.flush()?;
    bin.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`] and re-checks every label.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, PredictorError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut sidecar: Option<(String, fs::File)> = None;
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Line { mut record, sidecar: name, offset } =
            serde_json::from_str(&line).map_err(|e| PredictorError::Dataset(format!("line {}: {e}", n + 1)))?;
        if sidecar.as_ref().map_or(true, |(s, _)| *s != name) {
            sidecar = Some((name.clone(), fs::File::open(dir.join(&name))?));
        }
        let file = &mut sidecar.as_mut().unwrap().1;
        file.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; 4 * record.rows * record.cols];
        file.read_exact(&mut buf)?;
        record.window = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        record.check_label()?;
        out.push(record);
    }
    Ok(out)
}
