//! Batch-statistics power normalization.
//!
//! Standardizing each codeword dimension to zero mean and unit variance
//! makes the batch mean energy per dimension exactly 1, hence the mean
//! codeword energy exactly `n`; that is the whole job of this layer, so it
//! carries no learned scale or shift. Variances use the biased (1/B)
//! estimator — with the unbiased one the energy constraint would miss by
//! (B-1)/B.
//!
//! During training the statistics come from the current batch. At inference
//! they come from the full codebook, frozen in by
//! `codec::finalize_codebook_stats`; until that happens inference use is a
//! state error.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Variances below this are floored before the divide.
pub const VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Normalize with per-batch statistics; running stats track an EMA.
    TrainBatchStats,
    /// Normalize with the frozen full-codebook statistics.
    InferCodebookStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormPowerState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub mode: BnMode,
}

/// Forward-pass intermediates needed by the backward pass.
pub struct BnCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub floored: Vec<bool>,
}

/// Pure training-mode standardization: per-column batch mean/variance, no
/// state involved. Requires at least two rows.
pub fn batch_standardize(x: &Matrix) -> Result<(Matrix, BnCache)> {
    if x.rows() < 2 {
        return Err(Error::Config(format!(
            "batch standardization needs >= 2 rows, got {}",
            x.rows()
        )));
    }
    let n_cols = x.cols();
    let inv_b = 1.0 / x.rows() as f64;

    let mean = x.column_means();
    let mut var = vec![0.0; n_cols];
    for r in 0..x.rows() {
        let row = x.row(r);
        for j in 0..n_cols {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v *= inv_b;
    }

    let mut inv_std = vec![0.0; n_cols];
    let mut floored = vec![false; n_cols];
    for j in 0..n_cols {
        let v = if var[j] < VAR_FLOOR {
            floored[j] = true;
            VAR_FLOOR
        } else {
            var[j]
        };
        inv_std[j] = 1.0 / v.sqrt();
    }

    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for j in 0..n_cols {
            row[j] = (row[j] - mean[j]) * inv_std[j];
        }
    }
    let cache = BnCache {
        x_hat: out.clone(),
        inv_std,
        batch_mean: mean,
        batch_var: var,
        floored,
    };
    Ok((out, cache))
}

/// Gradient of the standardization. Per column, with `d = dL/dx̂`:
/// `dL/dx_i = inv_std · (d_i - mean(d) - x̂_i · mean(d ∘ x̂))`,
/// dropping the variance term where the floor was active (the divisor is
/// constant there).
pub fn batch_standardize_backward(cache: &BnCache, d_out: &Matrix) -> Matrix {
    let x_hat = &cache.x_hat;
    assert_eq!(d_out.rows(), x_hat.rows());
    assert_eq!(d_out.cols(), x_hat.cols());
    let rows = d_out.rows();
    let cols = d_out.cols();
    let inv_b = 1.0 / rows as f64;

    let mut mean_d = vec![0.0; cols];
    let mut mean_dx = vec![0.0; cols];
    for r in 0..rows {
        let d = d_out.row(r);
        let xh = x_hat.row(r);
        for j in 0..cols {
            mean_d[j] += d[j];
            mean_dx[j] += d[j] * xh[j];
        }
    }
    for j in 0..cols {
        mean_d[j] *= inv_b;
        mean_dx[j] *= inv_b;
    }

    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let d = d_out.row(r);
        let xh = x_hat.row(r);
        let o = out.row_mut(r);
        for j in 0..cols {
            let centered = if cache.floored[j] {
                d[j] - mean_d[j]
            } else {
                d[j] - mean_d[j] - xh[j] * mean_dx[j]
            };
            o[j] = cache.inv_std[j] * centered;
        }
    }
    out
}

impl BatchNormPowerState {
    pub fn new(n: usize, momentum: f64) -> Self {
        assert!(momentum > 0.0 && momentum < 1.0);
        BatchNormPowerState {
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
            momentum,
            mode: BnMode::TrainBatchStats,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    /// Dispatches on `training`: batch statistics (updating the running
    /// EMA) or the frozen inference statistics.
    pub fn forward(&mut self, x: &Matrix, training: bool) -> Result<Matrix> {
        if training {
            let (out, cache) = self.forward_train(x)?;
            drop(cache);
            Ok(out)
        } else {
            self.forward_infer(x)
        }
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, BnCache)> {
        if x.cols() != self.dim() {
            return Err(Error::Config(format!(
                "normalization expects {} dims, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let (out, cache) = batch_standardize(x)?;
        self.update_running(&cache.batch_mean, &cache.batch_var);
        Ok((out, cache))
    }

    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.dim() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * batch_mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * batch_var[j];
        }
    }

    /// Standardizes with the stored statistics; requires the codebook
    /// statistics to have been frozen in.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        if self.mode != BnMode::InferCodebookStats {
            return Err(Error::State(
                "inference normalization requires finalized codebook statistics".into(),
            ));
        }
        if x.cols() != self.dim() {
            return Err(Error::Config(format!(
                "normalization expects {} dims, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for j in 0..self.dim() {
                let v = self.running_var[j].max(VAR_FLOOR);
                row[j] = (row[j] - self.running_mean[j]) / v.sqrt();
            }
        }
        Ok(out)
    }

    /// Replaces the stored statistics with exact codebook statistics and
    /// switches to inference mode.
    pub fn set_codebook_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), self.dim());
        assert_eq!(var.len(), self.dim());
        self.running_mean = mean;
        self.running_var = var;
        self.mode = BnMode::InferCodebookStats;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngFactory;

    #[test]
    fn two_row_hand_case() {
        // Batch {2, 4} in one dimension: mean 3, biased variance 1.
        let x = Matrix::from_rows(&[&[2.0], &[4.0]]);
        let (out, _) = batch_standardize(&x).unwrap();
        assert!((out.get(0, 0) + 1.0).abs() < 1e-15);
        assert!((out.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn output_moments_are_standardized() {
        let mut s = RngFactory::new(91).stream("bn");
        let rows = 64;
        let cols = 6;
        let data: Vec<f64> = (0..rows * cols).map(|_| 2.5 * s.normal() + 1.7).collect();
        let x = Matrix::from_vec(rows, cols, data).unwrap();
        let (out, _) = batch_standardize(&x).unwrap();

        for j in 0..cols {
            let mut mean = 0.0;
            let mut energy = 0.0;
            for r in 0..rows {
                mean += out.get(r, j);
                energy += out.get(r, j) * out.get(r, j);
            }
            mean /= rows as f64;
            energy /= rows as f64;
            let var = energy - mean * mean;
            assert!(mean.abs() < 1e-9, "col {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "col {j} var {var}");
        }
        // Mean squared row norm equals the dimension count.
        let mut total = 0.0;
        for r in 0..rows {
            total += out.row(r).iter().map(|v| v * v).sum::<f64>();
        }
        assert!((total / rows as f64 - cols as f64).abs() < 1e-6);
    }

    #[test]
    fn idempotent_on_standardized_input() {
        let mut s = RngFactory::new(93).stream("bn2");
        let data: Vec<f64> = (0..40 * 3).map(|_| s.normal()).collect();
        let x = Matrix::from_vec(40, 3, data).unwrap();
        let (once, _) = batch_standardize(&x).unwrap();
        let (twice, _) = batch_standardize(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_variance_column_is_floored() {
        let x = Matrix::from_rows(&[&[5.0, 1.0], &[5.0, 3.0]]);
        let (out, cache) = batch_standardize(&x).unwrap();
        assert!(cache.floored[0]);
        assert!(!cache.floored[1]);
        assert!(out.is_finite());
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn single_row_batch_rejected() {
        let x = Matrix::from_rows(&[&[1.0, 2.0]]);
        assert!(batch_standardize(&x).is_err());
    }

    #[test]
    fn infer_before_finalize_is_state_error() {
        let state = BatchNormPowerState::new(2, 0.9);
        let x = Matrix::from_rows(&[&[1.0, 2.0]]);
        assert!(matches!(
            state.forward_infer(&x),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn running_stats_updated_only_in_training() {
        let mut state = BatchNormPowerState::new(1, 0.5);
        let x = Matrix::from_rows(&[&[2.0], &[4.0]]);
        state.forward(&x, true).unwrap();
        // mean: 0.5*0 + 0.5*3 = 1.5; var: 0.5*1 + 0.5*1 = 1.0
        assert!((state.running_mean[0] - 1.5).abs() < 1e-15);
        assert!((state.running_var[0] - 1.0).abs() < 1e-15);
        assert!(state.running_var[0] > 0.0);

        let before = state.clone();
        state.set_codebook_stats(vec![0.0], vec![1.0]);
        let _ = state.forward(&x, false).unwrap();
        assert_eq!(state.running_mean, vec![0.0]);
        drop(before);
    }

    #[test]
    fn infer_uses_stored_stats() {
        let mut state = BatchNormPowerState::new(1, 0.9);
        state.set_codebook_stats(vec![10.0], vec![4.0]);
        let x = Matrix::from_rows(&[&[12.0]]);
        let out = state.forward_infer(&x).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
    }
}
