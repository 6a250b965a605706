//! Early-measurement instability prediction: feature windows, intensity
//! maps, an attention-augmented convolutional classifier and a dense
//! first-swing frequency regressor.

mod classifier;
mod dataset;
mod features;
mod nn;
mod regressor;

pub use classifier::{predict_tis, train_classifier, train_cnn, CnnAtt, TisPrediction};
pub use dataset::{build_dataset, read_dataset, write_dataset, DatasetRecord, FIRST_SWING_SPAN};
pub use features::{
    extract_features, feature_window, first_swing_deviation, intensity_map, upsample, FeatureWindow,
    FEATURES_PER_MACHINE, MAX_COUNTERPARTS, RAW_WIDTH, WIDTH,
};
pub use nn::{Adam, Params, TensorSpec, TrainConfig, TrainReport};
pub use regressor::{
    pool_time, predict_frequency_deviation, train_mlp, train_regressor, FrequencyPrediction, Mlp, CONFIDENCE_GATE,
    POOLED_COLUMNS,
};

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("feature window: {0}")]
    Window(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, PredictorError> {
        if data.len() != rows * cols {
            return Err(PredictorError::Shape(format!("{} values for {rows}×{cols}", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Accuracy of always answering the most frequent label.
pub fn majority_baseline(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    ones.max(labels.len() - ones) as f64 / labels.len() as f64
}
