//! End-to-end training: uniform message sampling, training-mode encoding,
//! fresh AWGN per batch, one dropout class drawn per batch, exact backprop
//! through the frozen mask, Adam.
//!
//! The conventional autoencoder is the degenerate case `dropout = none`
//! (an all-ones mask every batch). Randomness is split over four labeled
//! streams — init, data, noise, dropout — so configurations that differ
//! only in dropout consume identical init/data/noise draws, and training
//! never shares a stream with evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    mask_random, mask_tail, sample_state, sigma_from_ebn0, DropoutMask, ErasureModel,
};
use crate::codec::{AeModel, Message, PowerConstraint};
use crate::matrix::Matrix;
use crate::nn::{training_loss_and_grads, AdamHyper, AdamState, AeGrads};
use crate::rng::{RngFactory, Stream};
use crate::{Error, Result};

/// Per-batch dropout strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DropoutSpec {
    /// No dropout: all-ones mask (conventional autoencoder).
    None,
    /// Deterministic prefix masks, class `l` keeps the first `r[l]` symbols.
    Tail { q: Vec<f64>, r: Vec<usize> },
    /// Per-class Bernoulli masks; one fresh realization per batch.
    Random { q: Vec<f64>, eps: Vec<f64> },
}

impl DropoutSpec {
    pub fn class_count(&self) -> usize {
        match self {
            DropoutSpec::None => 1,
            DropoutSpec::Tail { q, .. } | DropoutSpec::Random { q, .. } => q.len(),
        }
    }

    pub fn class_distribution(&self) -> Option<&[f64]> {
        match self {
            DropoutSpec::None => None,
            DropoutSpec::Tail { q, .. } | DropoutSpec::Random { q, .. } => Some(q),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            DropoutSpec::None => Ok(()),
            // The class machinery mirrors the channel-state machinery, so
            // reuse its validation.
            DropoutSpec::Tail { q, r } => ErasureModel::Tail {
                p: q.clone(),
                r: r.clone(),
            }
            .validate(n),
            DropoutSpec::Random { q, eps } => ErasureModel::Random {
                p: q.clone(),
                eps: eps.clone(),
            }
            .validate(n),
        }
    }
}

/// Every hyperparameter of a training run. Identical configs (including
/// the seed) produce bit-identical models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Message-set size `M` (a power of two).
    pub message_count: usize,
    /// Codeword length `n`.
    pub codeword_len: usize,
    /// Hidden layer widths, input to bottleneck; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_set_size: usize,
    pub ebn0_train_db: f64,
    pub power_constraint: PowerConstraint,
    pub dropout: DropoutSpec,
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            message_count: 4096,
            codeword_len: 24,
            hidden: vec![500],
            batch_size: 500,
            epochs: 100,
            train_set_size: 100_000,
            ebn0_train_db: 1.0,
            power_constraint: PowerConstraint::Average,
            dropout: DropoutSpec::Tail {
                q: vec![0.8, 0.1, 0.05, 0.05],
                r: vec![15, 18, 21, 24],
            },
            adam: AdamHyper::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn bits_per_message(&self) -> usize {
        self.message_count.trailing_zeros() as usize
    }

    pub fn rate(&self) -> f64 {
        self.bits_per_message() as f64 / self.codeword_len as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.message_count < 2 || !self.message_count.is_power_of_two() {
            return Err(Error::Config(format!(
                "message_count must be a power of two >= 2, got {}",
                self.message_count
            )));
        }
        if self.codeword_len == 0 {
            return Err(Error::Config("codeword_len must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let min_batch = match self.power_constraint {
            PowerConstraint::Average => 2,
            PowerConstraint::Fixed => 1,
        };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch_size must be >= {min_batch} for this power constraint"
            )));
        }
        if self.batch_size > self.train_set_size {
            return Err(Error::Config(format!(
                "batch_size {} exceeds train_set_size {}",
                self.batch_size, self.train_set_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !self.ebn0_train_db.is_finite() {
            return Err(Error::Config("ebn0_train_db must be finite".into()));
        }
        if !(self.adam.alpha > 0.0 && self.adam.alpha.is_finite()) {
            return Err(Error::Config("adam alpha must be positive".into()));
        }
        for (name, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must lie in [0,1)")));
            }
        }
        self.dropout.validate(self.codeword_len)
    }
}

/// What happened during a run; serialized next to the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub class_usage: Vec<u64>,
    pub wall_time_secs: f64,
    pub final_loss: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),

    /// Training hit a non-finite loss or gradient. Carries the model as of
    /// the last completed epoch, when one exists.
    #[error("numeric abort at epoch {epoch}, batch {batch}: {reason}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        reason: String,
        checkpoint: Option<Box<(AeModel, TrainReport)>>,
    },
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Invalid(inner) => inner,
            TrainError::NonFinite {
                epoch,
                batch,
                reason,
                ..
            } => Error::Numeric(format!(
                "training aborted at epoch {epoch}, batch {batch}: {reason}"
            )),
        }
    }
}

/// I.i.d. uniform message indices.
pub fn sample_training_set(m_count: usize, size: usize, stream: &mut Stream) -> Vec<Message> {
    (0..size).map(|_| stream.uniform_index(m_count) + 1).collect()
}

/// Runs the full training loop and (under the average constraint) freezes
/// the codebook statistics. The training set is drawn once and revisited
/// every epoch; noise and dropout classes are fresh per batch. A trailing
/// partial batch (when `train_set_size % batch_size != 0`) is dropped.
pub fn train(cfg: &TrainConfig) -> std::result::Result<(AeModel, TrainReport), TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let factory = RngFactory::new(cfg.seed);
    let mut init_stream = factory.stream("train/init");
    let mut data_stream = factory.stream("train/data");
    let mut noise_stream = factory.stream("train/noise");
    let mut dropout_stream = factory.stream("train/dropout");

    let mut model = AeModel::init(
        cfg.message_count,
        cfg.codeword_len,
        &cfg.hidden,
        cfg.power_constraint,
        &mut init_stream,
    )?;
    let messages = sample_training_set(cfg.message_count, cfg.train_set_size, &mut data_stream);
    let sigma = sigma_from_ebn0(cfg.ebn0_train_db, cfg.rate())?;
    let norm_kind = cfg.power_constraint.normalization();

    let mut adam = AdamState::new(cfg.adam, tensor_lens(&model));
    let n = cfg.codeword_len;
    let class_count = cfg.dropout.class_count();
    let mut class_usage = vec![0u64; class_count];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut checkpoint: Option<Box<(AeModel, TrainReport)>> = None;

    let batches_per_epoch = cfg.train_set_size / cfg.batch_size;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in 0..batches_per_epoch {
            let chunk = &messages[batch * cfg.batch_size..(batch + 1) * cfg.batch_size];
            let msgs0: Vec<usize> = chunk.iter().map(|&m| m - 1).collect();

            let mask = draw_batch_mask(&cfg.dropout, n, &mut dropout_stream, &mut class_usage)?;

            let noise_data: Vec<f64> = (0..chunk.len() * n)
                .map(|_| sigma * noise_stream.normal())
                .collect();
            let noise = Matrix::from_vec(chunk.len(), n, noise_data).expect("sized");

            let step = (|| -> Result<f64> {
                let (loss, grads) = training_loss_and_grads(
                    &model.encoder,
                    &model.decoder,
                    norm_kind,
                    &msgs0,
                    &noise,
                    mask.bits(),
                    model.norm.as_mut(),
                )?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("batch loss is {loss}")));
                }
                apply_adam(&mut model, &grads, &mut adam)?;
                Ok(loss)
            })();
            match step {
                Ok(loss) => loss_sum += loss,
                Err(Error::Numeric(reason)) => {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch,
                        reason,
                        checkpoint,
                    })
                }
                Err(other) => return Err(TrainError::Invalid(other)),
            }
        }
        epoch_loss.push(loss_sum / batches_per_epoch as f64);

        let report_so_far = TrainReport {
            epoch_loss: epoch_loss.clone(),
            class_usage: class_usage.clone(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            final_loss: *epoch_loss.last().expect("pushed"),
        };
        checkpoint = Some(Box::new((model.clone(), report_so_far)));
    }

    if cfg.power_constraint == PowerConstraint::Average {
        model.finalize_codebook_stats()?;
    }

    let report = TrainReport {
        final_loss: *epoch_loss.last().expect("at least one epoch"),
        epoch_loss,
        class_usage,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Samples the dropout class for one batch and builds its mask: class draw
/// and Bernoulli bits both come from the dedicated dropout stream.
fn draw_batch_mask(
    dropout: &DropoutSpec,
    n: usize,
    stream: &mut Stream,
    usage: &mut [u64],
) -> Result<DropoutMask> {
    match dropout {
        DropoutSpec::None => {
            usage[0] += 1;
            Ok(DropoutMask::all_ones(n))
        }
        DropoutSpec::Tail { q, r } => {
            let class = sample_state(q, stream);
            usage[class - 1] += 1;
            mask_tail(n, r[class - 1])
        }
        DropoutSpec::Random { q, eps } => {
            let class = sample_state(q, stream);
            usage[class - 1] += 1;
            Ok(mask_random(n, eps[class - 1], stream))
        }
    }
}

fn tensor_lens(model: &AeModel) -> Vec<usize> {
    let mut lens = Vec::new();
    for layer in model.encoder.layers.iter().chain(&model.decoder.layers) {
        lens.push(layer.weights.as_slice().len());
        lens.push(layer.bias.len());
    }
    lens
}

fn apply_adam(model: &mut AeModel, grads: &AeGrads, adam: &mut AdamState) -> Result<()> {
    let mut params: Vec<&mut [f64]> = Vec::new();
    for layer in model
        .encoder
        .layers
        .iter_mut()
        .chain(model.decoder.layers.iter_mut())
    {
        params.push(layer.weights.as_mut_slice());
        params.push(layer.bias.as_mut_slice());
    }
    let mut grad_slices: Vec<&[f64]> = Vec::new();
    for g in grads.encoder.iter().chain(&grads.decoder) {
        grad_slices.push(g.d_weights.as_slice());
        grad_slices.push(&g.d_bias);
    }
    adam.step(&mut params, &grad_slices)
}

/// Advisory convergence check on the loss trace: sliding 10-epoch window
/// means may never rise more than 5% above the best window seen so far.
#[derive(Debug, Clone, PartialEq)]
pub enum LossCurveCheck {
    Pass,
    /// Fewer than 10 epochs: nothing to check.
    TooShort { epochs: usize },
    /// A window mean rose above the slack threshold.
    Flagged {
        window_start: usize,
        window_mean: f64,
        best_mean: f64,
    },
}

pub fn loss_curve_monotone_check(report: &TrainReport) -> LossCurveCheck {
    const WINDOW: usize = 10;
    const SLACK: f64 = 1.05;
    let trace = &report.epoch_loss;
    if trace.len() < WINDOW {
        return LossCurveCheck::TooShort {
            epochs: trace.len(),
        };
    }
    let mut best = f64::INFINITY;
    for (start, window) in trace.windows(WINDOW).enumerate() {
        let mean = window.iter().sum::<f64>() / WINDOW as f64;
        if mean > best * SLACK {
            return LossCurveCheck::Flagged {
                window_start: start,
                window_mean: mean,
                best_mean: best,
            };
        }
        best = best.min(mean);
    }
    LossCurveCheck::Pass
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> TrainConfig {
        TrainConfig {
            message_count: 16,
            codeword_len: 8,
            hidden: vec![32],
            batch_size: 50,
            epochs: 50,
            train_set_size: 2000,
            ebn0_train_db: 4.0,
            power_constraint: PowerConstraint::Average,
            dropout: DropoutSpec::None,
            adam: AdamHyper::default(),
            seed: 7,
        }
    }

    #[test]
    fn sample_training_set_degenerate_and_deterministic() {
        let f = RngFactory::new(1);
        let ones = sample_training_set(1, 20, &mut f.stream("d"));
        assert!(ones.iter().all(|&m| m == 1));
        let a = sample_training_set(16, 100, &mut f.stream("d2"));
        let b = sample_training_set(16, 100, &mut f.stream("d2"));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_training_set_uniform_frequencies() {
        let m = 16;
        let size = 100_000;
        let mut s = RngFactory::new(2).stream("freq");
        let msgs = sample_training_set(m, size, &mut s);
        let mut counts = vec![0usize; m];
        for msg in msgs {
            counts[msg - 1] += 1;
        }
        let p = 1.0 / m as f64;
        let bound = 3.0 * (p * (1.0 - p) / size as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / size as f64;
            assert!((freq - p).abs() < bound, "message {i}: {freq}");
        }
    }

    #[test]
    fn smoke_training_learns_the_code() {
        let cfg = smoke_config();
        let (model, report) = train(&cfg).unwrap();
        let budget = 0.1 * (cfg.message_count as f64).ln();
        assert!(
            report.final_loss < budget,
            "final loss {} vs budget {budget}",
            report.final_loss
        );
        // Zero-noise round trip must be perfect after training.
        for m in 1..=16 {
            let cw = model.encode(m).unwrap();
            let (m_hat, _) = model.decode(&cw.symbols);
            assert_eq!(m_hat, m, "round trip failed for message {m}");
        }
        assert_eq!(report.class_usage, vec![50 * (2000 / 50) as u64]);
        assert_eq!(report.epoch_loss.len(), 50);
    }

    #[test]
    fn smoke_training_at_low_snr_still_round_trips() {
        // At 0 dB this rate sits near channel capacity, so the training
        // loss plateaus at the equivocation floor (~0.5 nats) rather than
        // near zero; the code itself is still cleanly decodable without
        // noise.
        let cfg = TrainConfig {
            ebn0_train_db: 0.0,
            ..smoke_config()
        };
        let (model, report) = train(&cfg).unwrap();
        assert!(
            report.final_loss < 1.0,
            "final loss {} should be well below chance ln(16) = 2.77",
            report.final_loss
        );
        for m in 1..=16 {
            let cw = model.encode(m).unwrap();
            let (m_hat, _) = model.decode(&cw.symbols);
            assert_eq!(m_hat, m, "round trip failed for message {m}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            ..smoke_config()
        };
        let (a, ra) = train(&cfg).unwrap();
        let (b, rb) = train(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epoch_loss, rb.epoch_loss);

        let other = TrainConfig {
            seed: 8,
            ..cfg.clone()
        };
        let (c, _) = train(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn conventional_equals_degenerate_tail_dropout() {
        // Full-width tail dropout with all mass on r = n draws its classes
        // from the dedicated dropout stream, so data/noise/init draws line
        // up with dropout = none and the models match batch for batch.
        let base = TrainConfig {
            epochs: 4,
            ..smoke_config()
        };
        let degenerate = TrainConfig {
            dropout: DropoutSpec::Tail {
                q: vec![0.0, 0.0, 0.0, 1.0],
                r: vec![2, 4, 6, 8],
            },
            ..base.clone()
        };
        let (a, ra) = train(&base).unwrap();
        let (b, rb) = train(&degenerate).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epoch_loss, rb.epoch_loss);
        assert_eq!(rb.class_usage, vec![0, 0, 0, ra.class_usage[0]]);
    }

    #[test]
    fn single_class_tail_uses_only_that_mask() {
        let cfg = TrainConfig {
            epochs: 5,
            dropout: DropoutSpec::Tail {
                q: vec![1.0, 0.0, 0.0, 0.0],
                r: vec![5, 6, 7, 8],
            },
            ..smoke_config()
        };
        let (_, report) = train(&cfg).unwrap();
        let total: u64 = report.class_usage.iter().sum();
        assert_eq!(report.class_usage, vec![total, 0, 0, 0]);
    }

    #[test]
    fn class_usage_matches_distribution() {
        let q = vec![0.8, 0.1, 0.05, 0.05];
        let cfg = TrainConfig {
            epochs: 40,
            dropout: DropoutSpec::Tail {
                q: q.clone(),
                r: vec![5, 6, 7, 8],
            },
            ..smoke_config()
        };
        let (_, report) = train(&cfg).unwrap();
        let total: u64 = report.class_usage.iter().sum();
        assert_eq!(total, 40 * 40);
        for (l, &ql) in q.iter().enumerate() {
            let freq = report.class_usage[l] as f64 / total as f64;
            let bound = 3.0 * (ql * (1.0 - ql) / total as f64).sqrt();
            assert!(
                (freq - ql).abs() <= bound,
                "class {l}: freq {freq} vs q {ql} (bound {bound})"
            );
        }
    }

    #[test]
    fn random_dropout_trains() {
        let cfg = TrainConfig {
            epochs: 10,
            dropout: DropoutSpec::Random {
                q: vec![0.25, 0.25, 0.25, 0.25],
                eps: vec![0.375, 0.25, 0.125, 0.0],
            },
            ..smoke_config()
        };
        let (model, report) = train(&cfg).unwrap();
        assert!(model.is_finalized());
        assert!(report.final_loss.is_finite());
        assert_eq!(report.class_usage.iter().sum::<u64>(), 10 * 40);
    }

    #[test]
    fn absurd_learning_rate_aborts_numerically() {
        let cfg = TrainConfig {
            adam: AdamHyper {
                alpha: 1e300,
                ..AdamHyper::default()
            },
            ..smoke_config()
        };
        match train(&cfg) {
            Err(TrainError::NonFinite { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_m = TrainConfig {
            message_count: 24,
            ..smoke_config()
        };
        assert!(matches!(train(&bad_m), Err(TrainError::Invalid(_))));

        let bad_q = TrainConfig {
            dropout: DropoutSpec::Tail {
                q: vec![0.5, 0.2],
                r: vec![4, 8],
            },
            ..smoke_config()
        };
        assert!(bad_q.validate().is_err());

        let bad_batch = TrainConfig {
            batch_size: 4000,
            ..smoke_config()
        };
        assert!(bad_batch.validate().is_err());
    }

    #[test]
    fn loss_curve_check_cases() {
        let mk = |trace: Vec<f64>| TrainReport {
            final_loss: *trace.last().unwrap(),
            epoch_loss: trace,
            class_usage: vec![0],
            wall_time_secs: 0.0,
        };
        // Strictly decreasing passes.
        let dec: Vec<f64> = (0..30).map(|i| 3.0 - 0.05 * i as f64).collect();
        assert_eq!(loss_curve_monotone_check(&mk(dec)), LossCurveCheck::Pass);
        // Flat passes (plateau allowed).
        assert_eq!(
            loss_curve_monotone_check(&mk(vec![1.0; 25])),
            LossCurveCheck::Pass
        );
        // Ending 2x above the minimum window is flagged.
        let mut bad: Vec<f64> = (0..20).map(|i| 2.0 - 0.05 * i as f64).collect();
        bad.extend(std::iter::repeat(2.2).take(15));
        assert!(matches!(
            loss_curve_monotone_check(&mk(bad)),
            LossCurveCheck::Flagged { .. }
        ));
        // Fewer than ten epochs: advisory no-op.
        assert_eq!(
            loss_curve_monotone_check(&mk(vec![1.0; 5])),
            LossCurveCheck::TooShort { epochs: 5 }
        );
    }
}
