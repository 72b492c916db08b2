//! The end-to-end training graph: one-hot input, encoder stack, power
//! normalization, additive noise, frozen dropout mask, decoder stack,
//! softmax cross-entropy. Forward and backward run against frozen noise and
//! mask realizations, which also makes the loss a plain function of the
//! parameters for finite-difference checks.

use crate::matrix::Matrix;
use crate::{Error, Result};

use super::batchnorm::{batch_standardize, batch_standardize_backward, BatchNormPowerState};
use super::dense::{DenseGrads, Mlp, MlpInput};
use super::loss::{mean_cross_entropy, softmax, softmax_ce_grad};
use super::ops::{mask_columns, scale_row_to_energy};

/// Which power normalization sits after the encoder bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Per-row rescale to squared norm `n`.
    FixedPower,
    /// Per-dimension batch standardization (average power constraint).
    BatchStandardize,
}

/// Gradients of the mean batch cross-entropy for every parameter, plus the
/// gradient at the channel output (zero wherever the mask is zero).
pub struct AeGrads {
    pub encoder: Vec<DenseGrads>,
    pub decoder: Vec<DenseGrads>,
    pub d_channel: Matrix,
}

fn check_shapes(
    encoder: &Mlp,
    decoder: &Mlp,
    msgs: &[usize],
    noise: &Matrix,
    mask_bits: &[u8],
) -> Result<()> {
    let n = encoder.out_width();
    if decoder.in_width() != n {
        return Err(Error::Config(format!(
            "encoder output width {} != decoder input width {}",
            n,
            decoder.in_width()
        )));
    }
    if noise.rows() != msgs.len() || noise.cols() != n {
        return Err(Error::Config(format!(
            "noise is {}x{}, expected {}x{}",
            noise.rows(),
            noise.cols(),
            msgs.len(),
            n
        )));
    }
    if mask_bits.len() != n {
        return Err(Error::Config(format!(
            "mask has {} bits, expected {}",
            mask_bits.len(),
            n
        )));
    }
    let m_count = encoder.in_width();
    if let Some(&bad) = msgs.iter().find(|&&m| m >= m_count) {
        return Err(Error::Input(format!(
            "message index {bad} out of range for {m_count} messages"
        )));
    }
    Ok(())
}

/// Normalizes the raw bottleneck batch, returning what backward needs.
fn normalize_forward(raw: &Matrix, norm: Normalization) -> Result<(Matrix, NormCache)> {
    match norm {
        Normalization::FixedPower => {
            let mut x = raw.clone();
            let mut norms = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let nrm = scale_row_to_energy(x.row_mut(r)).map_err(|e| {
                    Error::Numeric(format!("fixed-power normalization of batch row {r}: {e}"))
                })?;
                norms.push(nrm);
            }
            Ok((
                x,
                NormCache::Fixed {
                    raw: raw.clone(),
                    norms,
                },
            ))
        }
        Normalization::BatchStandardize => {
            let (x, cache) = batch_standardize(raw)?;
            Ok((x, NormCache::Batch(cache)))
        }
    }
}

enum NormCache {
    Fixed { raw: Matrix, norms: Vec<f64> },
    Batch(super::batchnorm::BnCache),
}

/// Mean batch cross-entropy for frozen noise and mask. Pure in the
/// parameters; batch statistics are recomputed from the batch itself.
pub fn training_loss(
    encoder: &Mlp,
    decoder: &Mlp,
    norm: Normalization,
    msgs: &[usize],
    noise: &Matrix,
    mask_bits: &[u8],
) -> Result<f64> {
    check_shapes(encoder, decoder, msgs, noise, mask_bits)?;
    let raw = encoder.forward(MlpInput::OneHot {
        indices: msgs,
        width: encoder.in_width(),
    });
    let (mut y, _cache) = normalize_forward(&raw, norm)?;
    for (v, &z) in y.as_mut_slice().iter_mut().zip(noise.as_slice()) {
        *v += z;
    }
    let masked = mask_columns(&y, mask_bits);
    let logits = decoder.forward(MlpInput::Dense(&masked));
    let probs = softmax(&logits);
    Ok(mean_cross_entropy(&probs, msgs))
}

/// Loss plus exact analytic gradients for every weight and bias, through
/// the frozen mask (masked channel neurons propagate exactly zero) and the
/// power normalization. When `norm_state` is given and the normalization is
/// batch standardization, the running statistics are updated as a side
/// effect.
pub fn training_loss_and_grads(
    encoder: &Mlp,
    decoder: &Mlp,
    norm: Normalization,
    msgs: &[usize],
    noise: &Matrix,
    mask_bits: &[u8],
    norm_state: Option<&mut BatchNormPowerState>,
) -> Result<(f64, AeGrads)> {
    check_shapes(encoder, decoder, msgs, noise, mask_bits)?;

    let enc_cache = encoder.forward_cached(MlpInput::OneHot {
        indices: msgs,
        width: encoder.in_width(),
    });
    let (x, norm_cache) = normalize_forward(enc_cache.output(), norm)?;
    if let (Some(state), NormCache::Batch(cache)) = (norm_state, &norm_cache) {
        state.update_running(&cache.batch_mean, &cache.batch_var);
    }

    let mut y = x;
    for (v, &z) in y.as_mut_slice().iter_mut().zip(noise.as_slice()) {
        *v += z;
    }
    let masked = mask_columns(&y, mask_bits);

    let dec_cache = decoder.forward_cached(MlpInput::Dense(&masked));
    let probs = softmax(dec_cache.output());
    let loss = mean_cross_entropy(&probs, msgs);

    // Backward.
    let d_logits = softmax_ce_grad(&probs, msgs);
    let (dec_grads, d_masked) = decoder.backward(&dec_cache, &d_logits, true);
    let d_masked = d_masked.expect("requested");

    // Mask backward: masked-out neurons contribute exactly zero.
    let d_channel = mask_columns(&d_masked, mask_bits);

    // Additive noise backward is the identity.
    let d_raw = match &norm_cache {
        NormCache::Batch(cache) => batch_standardize_backward(cache, &d_channel),
        NormCache::Fixed { raw, norms } => fixed_power_backward(raw, norms, &d_channel),
    };

    let (enc_grads, _) = encoder.backward(&enc_cache, &d_raw, false);

    Ok((
        loss,
        AeGrads {
            encoder: enc_grads,
            decoder: dec_grads,
            d_channel,
        },
    ))
}

/// Jacobian of `x = sqrt(n) t / ||t||` applied to `d_x` row by row:
/// `d_t = sqrt(n)/||t|| (d_x - t (t . d_x) / ||t||^2)`.
fn fixed_power_backward(raw: &Matrix, norms: &[f64], d_x: &Matrix) -> Matrix {
    let n = raw.cols() as f64;
    let sqrt_n = n.sqrt();
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for r in 0..raw.rows() {
        let t = raw.row(r);
        let d = d_x.row(r);
        let norm = norms[r];
        let dot: f64 = t.iter().zip(d).map(|(a, b)| a * b).sum();
        let coeff = dot / (norm * norm);
        let o = out.row_mut(r);
        for j in 0..t.len() {
            o[j] = sqrt_n / norm * (d[j] - t[j] * coeff);
        }
    }
    out
}
