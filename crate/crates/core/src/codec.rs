//! The learned encoder/decoder pair.
//!
//! The encoder maps a message index (1-based, `1..=M`) through a one-hot
//! input, a ReLU stack, a linear bottleneck of width `n`, and a power
//! normalization. The decoder maps a length-`n` received vector (erasures
//! zero-filled) through the mirrored stack to a softmax over messages;
//! decoding takes the argmax, ties broken to the lowest index.
//!
//! Under the average power constraint, inference normalization uses exact
//! statistics over the full codebook, frozen by
//! [`AeModel::finalize_codebook_stats`]; the constraint then holds exactly
//! rather than up to running-average noise.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::nn::ops::scale_row_to_energy;
use crate::nn::{BatchNormPowerState, DenseParams, Mlp, MlpInput, Normalization};
use crate::rng::Stream;
use crate::{Error, Result};

/// Message indices are 1-based: `1..=M`.
pub type Message = usize;

/// EMA momentum for the training-time running statistics (diagnostic only;
/// inference uses exact codebook statistics).
pub const BN_MOMENTUM: f64 = 0.9;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerConstraint {
    /// Every codeword has squared norm exactly `n`.
    Fixed,
    /// The codebook-average squared norm is `n`.
    Average,
}

impl PowerConstraint {
    pub fn normalization(self) -> Normalization {
        match self {
            PowerConstraint::Fixed => Normalization::FixedPower,
            PowerConstraint::Average => Normalization::BatchStandardize,
        }
    }
}

/// One codeword of `n` real symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub symbols: Vec<f64>,
}

/// All `M` codewords; row `m-1` is the codeword of message `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    matrix: Matrix,
}

impl Codebook {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn message_count(&self) -> usize {
        self.matrix.rows()
    }

    pub fn codeword(&self, m: Message) -> &[f64] {
        self.matrix.row(m - 1)
    }

    /// Mean squared row norm.
    pub fn mean_energy(&self) -> f64 {
        let total: f64 = self.matrix.as_slice().iter().map(|v| v * v).sum();
        total / self.matrix.rows() as f64
    }
}

/// The full trainable model: layer parameters plus normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    message_count: usize,
    codeword_len: usize,
    hidden: Vec<usize>,
    pub encoder: Mlp,
    pub decoder: Mlp,
    constraint: PowerConstraint,
    pub norm: Option<BatchNormPowerState>,
    pub format_version: u32,
}

/// One-hot row for message `m` of `m_count` (1-based).
pub fn one_hot(m: Message, m_count: usize) -> Result<Vec<f64>> {
    if m < 1 || m > m_count {
        return Err(Error::Input(format!(
            "message {m} out of range 1..={m_count}"
        )));
    }
    let mut u = vec![0.0; m_count];
    u[m - 1] = 1.0;
    Ok(u)
}

/// Rescales to squared norm `n` (= vector length): `sqrt(n) x / ||x||`.
pub fn normalize_fixed(x: &[f64]) -> Result<Codeword> {
    let mut symbols = x.to_vec();
    scale_row_to_energy(&mut symbols)?;
    Ok(Codeword { symbols })
}

impl AeModel {
    /// Fresh randomly initialized model. ReLU-feeding layers use
    /// `N(0, 2/fan_in)`, the final encoder/decoder layers `N(0, 1/fan_in)`,
    /// biases zero; draw order is fixed so the layout is a pure function of
    /// the stream.
    pub fn init(
        message_count: usize,
        codeword_len: usize,
        hidden: &[usize],
        constraint: PowerConstraint,
        stream: &mut Stream,
    ) -> Result<Self> {
        if message_count < 2 || !message_count.is_power_of_two() {
            return Err(Error::Config(format!(
                "message count must be a power of two >= 2, got {message_count}"
            )));
        }
        if codeword_len == 0 {
            return Err(Error::Config("codeword length must be positive".into()));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config(format!(
                "hidden layer widths must be positive, got {hidden:?}"
            )));
        }

        let build = |widths: &[usize], stream: &mut Stream| -> Mlp {
            let last = widths.len() - 2;
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let std = if i == last {
                        (1.0 / w[0] as f64).sqrt()
                    } else {
                        (2.0 / w[0] as f64).sqrt()
                    };
                    DenseParams::init_gaussian(w[0], w[1], std, stream)
                })
                .collect();
            Mlp::new(layers)
        };

        let mut enc_widths = vec![message_count];
        enc_widths.extend_from_slice(hidden);
        enc_widths.push(codeword_len);
        let mut dec_widths = vec![codeword_len];
        dec_widths.extend(hidden.iter().rev());
        dec_widths.push(message_count);

        let encoder = build(&enc_widths, stream);
        let decoder = build(&dec_widths, stream);

        let norm = match constraint {
            PowerConstraint::Average => {
                Some(BatchNormPowerState::new(codeword_len, BN_MOMENTUM))
            }
            PowerConstraint::Fixed => None,
        };

        Ok(AeModel {
            message_count,
            codeword_len,
            hidden: hidden.to_vec(),
            encoder,
            decoder,
            constraint,
            norm,
            format_version: MODEL_FORMAT_VERSION,
        })
    }

    /// Reassembles a model from its parts, revalidating the shape chain.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        message_count: usize,
        codeword_len: usize,
        hidden: Vec<usize>,
        encoder: Mlp,
        decoder: Mlp,
        constraint: PowerConstraint,
        norm: Option<BatchNormPowerState>,
        format_version: u32,
    ) -> Result<Self> {
        if message_count < 2 || !message_count.is_power_of_two() {
            return Err(Error::Config(format!(
                "message count must be a power of two >= 2, got {message_count}"
            )));
        }
        if encoder.in_width() != message_count
            || encoder.out_width() != codeword_len
            || decoder.in_width() != codeword_len
            || decoder.out_width() != message_count
        {
            return Err(Error::Config(format!(
                "layer shapes do not chain: encoder {}->{}, decoder {}->{}, expected {}->{}->{}",
                encoder.in_width(),
                encoder.out_width(),
                decoder.in_width(),
                decoder.out_width(),
                message_count,
                codeword_len,
                message_count
            )));
        }
        match (constraint, &norm) {
            (PowerConstraint::Average, Some(state)) if state.dim() != codeword_len => {
                return Err(Error::Config(format!(
                    "normalization state has {} dims, expected {codeword_len}",
                    state.dim()
                )));
            }
            (PowerConstraint::Average, None) => {
                return Err(Error::Config(
                    "average constraint requires normalization state".into(),
                ));
            }
            (PowerConstraint::Fixed, Some(_)) => {
                return Err(Error::Config(
                    "fixed constraint carries no normalization state".into(),
                ));
            }
            _ => {}
        }
        Ok(AeModel {
            message_count,
            codeword_len,
            hidden,
            encoder,
            decoder,
            constraint,
            norm,
            format_version,
        })
    }

    pub fn message_count(&self) -> usize {
        self.message_count
    }

    pub fn codeword_len(&self) -> usize {
        self.codeword_len
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Information bits per message: `log2(M)`.
    pub fn bits_per_message(&self) -> usize {
        self.message_count.trailing_zeros() as usize
    }

    /// Code rate `R = k/n`.
    pub fn rate(&self) -> f64 {
        self.bits_per_message() as f64 / self.codeword_len as f64
    }

    pub fn constraint(&self) -> PowerConstraint {
        self.constraint
    }

    /// True once inference encoding is available under the average
    /// constraint (always true under the fixed constraint).
    pub fn is_finalized(&self) -> bool {
        match (&self.constraint, &self.norm) {
            (PowerConstraint::Fixed, _) => true,
            (PowerConstraint::Average, Some(state)) => {
                state.mode == crate::nn::BnMode::InferCodebookStats
            }
            (PowerConstraint::Average, None) => false,
        }
    }

    fn check_messages(&self, msgs: &[Message]) -> Result<()> {
        if let Some(&bad) = msgs.iter().find(|&&m| m < 1 || m > self.message_count) {
            return Err(Error::Input(format!(
                "message {bad} out of range 1..={}",
                self.message_count
            )));
        }
        Ok(())
    }

    /// Bottleneck outputs before any power normalization.
    pub fn raw_bottleneck(&self, msgs: &[Message]) -> Result<Matrix> {
        self.check_messages(msgs)?;
        let idx: Vec<usize> = msgs.iter().map(|&m| m - 1).collect();
        Ok(self.encoder.forward(MlpInput::OneHot {
            indices: &idx,
            width: self.message_count,
        }))
    }

    /// Inference encoding of a batch of messages.
    pub fn encode_batch(&self, msgs: &[Message]) -> Result<Matrix> {
        let raw = self.raw_bottleneck(msgs)?;
        self.normalize_infer(raw)
    }

    fn normalize_infer(&self, mut raw: Matrix) -> Result<Matrix> {
        match (&self.constraint, &self.norm) {
            (PowerConstraint::Fixed, _) => {
                for r in 0..raw.rows() {
                    scale_row_to_energy(raw.row_mut(r))?;
                }
                Ok(raw)
            }
            (PowerConstraint::Average, Some(state)) => state.forward_infer(&raw),
            (PowerConstraint::Average, None) => Err(Error::State(
                "average-constraint model has no normalization state".into(),
            )),
        }
    }

    /// Training-mode encoding: batch-statistics normalization under the
    /// average constraint (updating running statistics), per-row rescale
    /// under the fixed constraint.
    pub fn encode_batch_training(&mut self, msgs: &[Message]) -> Result<Matrix> {
        let raw = self.raw_bottleneck(msgs)?;
        match (&self.constraint, &mut self.norm) {
            (PowerConstraint::Fixed, _) => {
                let mut x = raw;
                for r in 0..x.rows() {
                    scale_row_to_energy(x.row_mut(r))?;
                }
                Ok(x)
            }
            (PowerConstraint::Average, Some(state)) => {
                let (x, _) = state.forward_train(&raw)?;
                Ok(x)
            }
            (PowerConstraint::Average, None) => Err(Error::State(
                "average-constraint model has no normalization state".into(),
            )),
        }
    }

    /// Deterministic inference encoding of one message.
    pub fn encode(&self, m: Message) -> Result<Codeword> {
        let x = self.encode_batch(&[m])?;
        Ok(Codeword {
            symbols: x.row(0).to_vec(),
        })
    }

    /// Decodes one received vector (erasures zero-filled): returns the
    /// argmax message (lowest index on ties) and the softmax row.
    pub fn decode(&self, y: &[f64]) -> (Message, Vec<f64>) {
        assert_eq!(y.len(), self.codeword_len, "received vector length");
        let input = Matrix::from_vec(1, self.codeword_len, y.to_vec()).expect("sized");
        let logits = self.decoder.forward(MlpInput::Dense(&input));
        let probs = crate::nn::softmax(&logits);
        let m_hat = argmax_first(probs.row(0)) + 1;
        (m_hat, probs.into_vec())
    }

    /// Batch decode returning message estimates only. The argmax is taken
    /// over the logits, which softmax preserves order-for-order.
    pub fn decode_batch(&self, y: &Matrix) -> Vec<Message> {
        assert_eq!(y.cols(), self.codeword_len, "received vector length");
        let logits = self.decoder.forward(MlpInput::Dense(y));
        (0..logits.rows())
            .map(|r| argmax_first(logits.row(r)) + 1)
            .collect()
    }

    /// SHA-256 over the model's shape header and every parameter byte;
    /// changes iff the model content changes.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.message_count as u64).to_le_bytes());
        h.update((self.codeword_len as u64).to_le_bytes());
        h.update((self.hidden.len() as u64).to_le_bytes());
        for &w in &self.hidden {
            h.update((w as u64).to_le_bytes());
        }
        h.update(match self.constraint {
            PowerConstraint::Fixed => [0u8],
            PowerConstraint::Average => [1u8],
        });
        h.update(self.format_version.to_le_bytes());
        for layer in self.encoder.layers.iter().chain(&self.decoder.layers) {
            for &v in layer.weights.as_slice() {
                h.update(v.to_le_bytes());
            }
            for &v in &layer.bias {
                h.update(v.to_le_bytes());
            }
        }
        if let Some(state) = &self.norm {
            h.update(match state.mode {
                crate::nn::BnMode::TrainBatchStats => [0u8],
                crate::nn::BnMode::InferCodebookStats => [1u8],
            });
            h.update(state.momentum.to_le_bytes());
            for &v in state.running_mean.iter().chain(&state.running_var) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Materializes the encoder over every message.
    pub fn extract_codebook(&self) -> Result<Codebook> {
        let msgs: Vec<Message> = (1..=self.message_count).collect();
        Ok(Codebook {
            matrix: self.encode_batch(&msgs)?,
        })
    }

    /// Freezes exact per-dimension mean/variance of the raw bottleneck over
    /// all `M` messages as the inference statistics, making the average
    /// power constraint hold exactly over the codebook. Idempotent; a no-op
    /// with a warning under the fixed constraint.
    pub fn finalize_codebook_stats(&mut self) -> Result<()> {
        match self.constraint {
            PowerConstraint::Fixed => {
                log::warn!("finalize_codebook_stats is a no-op under the fixed power constraint");
                Ok(())
            }
            PowerConstraint::Average => {
                let msgs: Vec<Message> = (1..=self.message_count).collect();
                let raw = self.raw_bottleneck(&msgs)?;
                let mean = raw.column_means();
                let mut var = vec![0.0; self.codeword_len];
                for r in 0..raw.rows() {
                    let row = raw.row(r);
                    for (j, v) in var.iter_mut().enumerate() {
                        let d = row[j] - mean[j];
                        *v += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= raw.rows() as f64;
                }
                self.norm
                    .as_mut()
                    .expect("average constraint carries norm state")
                    .set_codebook_stats(mean, var);
                Ok(())
            }
        }
    }
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
