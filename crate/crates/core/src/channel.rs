//! The cascaded AWGN + erasure channel and the dropout masks that emulate
//! it during training.
//!
//! Two erasure variants share one state-distribution mechanism: tail
//! erasures deliver only the first `r` symbols of a codeword, random
//! erasures drop each symbol independently with a state-dependent
//! probability. Erased symbols are zero-filled for the decoder, exactly
//! matching the training-time dropout semantics, and the mask is applied to
//! the noisy codeword (`y = x + z`); with zero-filling the noise/erasure
//! order is invisible to the decoder.
//!
//! Noise calibration: `sigma^2 = 1 / (2 R (Eb/N0)_linear)` with the nominal
//! rate `R = k/n` and unit average symbol energy. Sigma does not change
//! with the number of surviving symbols. Surviving symbols are never
//! rescaled: the mask stands in for a physical erasure, not a stochastic
//! regularizer.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::nn::ops::mask_columns;
use crate::rng::Stream;
use crate::{Error, Result};

/// Tolerance for "the state probabilities sum to one".
const DIST_TOL: f64 = 1e-12;

/// Erasure channel description: `L` states with probabilities `p` and
/// either per-state prefix lengths `r` (tail) or per-state symbol erasure
/// probabilities `eps` (random).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErasureModel {
    Tail { p: Vec<f64>, r: Vec<usize> },
    Random { p: Vec<f64>, eps: Vec<f64> },
}

/// One erasure state, as used by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelState {
    /// Only the first `r` symbols arrive.
    Tail { r: usize },
    /// Each symbol is erased independently with probability `eps`.
    Random { eps: f64 },
}

impl std::fmt::Display for ChannelState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelState::Tail { r } => write!(f, "r={r}"),
            ChannelState::Random { eps } => write!(f, "eps={eps}"),
        }
    }
}

pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Config("state distribution is empty".into()));
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Config(format!(
            "state probabilities must lie in [0,1], got {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::Config(format!(
            "state probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

impl ErasureModel {
    /// Validates the invariants against a codeword length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ErasureModel::Tail { p, r } => {
                validate_distribution(p)?;
                if r.len() != p.len() {
                    return Err(Error::Config(format!(
                        "tail model has {} probabilities but {} prefix lengths",
                        p.len(),
                        r.len()
                    )));
                }
                for pair in r.windows(2) {
                    if pair[1] <= pair[0] {
                        return Err(Error::Config(format!(
                            "prefix lengths must be strictly ascending, got {r:?}"
                        )));
                    }
                }
                if r[0] < 1 || *r.last().expect("nonempty") > n {
                    return Err(Error::Config(format!(
                        "prefix lengths must lie in 1..={n}, got {r:?}"
                    )));
                }
                Ok(())
            }
            ErasureModel::Random { p, eps } => {
                validate_distribution(p)?;
                if eps.len() != p.len() {
                    return Err(Error::Config(format!(
                        "random model has {} probabilities but {} erasure rates",
                        p.len(),
                        eps.len()
                    )));
                }
                if eps.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
                    return Err(Error::Config(format!(
                        "erasure probabilities must lie in [0,1], got {eps:?}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn state_count(&self) -> usize {
        match self {
            ErasureModel::Tail { p, .. } | ErasureModel::Random { p, .. } => p.len(),
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        match self {
            ErasureModel::Tail { p, .. } | ErasureModel::Random { p, .. } => p,
        }
    }

    /// The `l`-th state, 1-based.
    pub fn state(&self, l: usize) -> ChannelState {
        assert!(l >= 1 && l <= self.state_count(), "state index out of range");
        match self {
            ErasureModel::Tail { r, .. } => ChannelState::Tail { r: r[l - 1] },
            ErasureModel::Random { eps, .. } => ChannelState::Random { eps: eps[l - 1] },
        }
    }

    pub fn states(&self) -> Vec<ChannelState> {
        (1..=self.state_count()).map(|l| self.state(l)).collect()
    }
}

/// Binary length-`n` mask over channel-output neurons; zero entries erase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutMask {
    bits: Vec<u8>,
}

impl DropoutMask {
    pub fn all_ones(n: usize) -> Self {
        DropoutMask { bits: vec![1; n] }
    }

    pub fn from_bits(bits: Vec<u8>) -> Self {
        assert!(bits.iter().all(|&b| b <= 1), "mask bits must be 0 or 1");
        DropoutMask { bits }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

/// Noise level derived from Eb/N0 and the code rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ebn0_db: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(ebn0_db: f64, rate: f64) -> Result<Self> {
        Ok(NoiseSpec {
            ebn0_db,
            rate,
            sigma: sigma_from_ebn0(ebn0_db, rate)?,
        })
    }
}

/// `sigma = sqrt(1 / (2 R 10^(EbN0_dB/10)))`.
pub fn sigma_from_ebn0(ebn0_db: f64, rate: f64) -> Result<f64> {
    if rate <= 0.0 {
        return Err(Error::Config(format!("code rate must be positive, got {rate}")));
    }
    let ebn0_lin = 10f64.powf(ebn0_db / 10.0);
    Ok((1.0 / (2.0 * rate * ebn0_lin)).sqrt())
}

/// `y = x + z`, `z` i.i.d. `Normal(0, sigma^2)`, fresh draws per call.
pub fn awgn(x: &Matrix, sigma: f64, stream: &mut Stream) -> Matrix {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    let mut y = x.clone();
    if sigma == 0.0 {
        return y;
    }
    for v in y.as_mut_slice() {
        *v += sigma * stream.normal();
    }
    y
}

/// Samples a state index in `{1..L}` from `p` by inverse CDF.
pub fn sample_state(p: &[f64], stream: &mut Stream) -> usize {
    stream.categorical(p) + 1
}

/// Deterministic tail mask: ones at positions `1..=r_l`, zeros after.
pub fn mask_tail(n: usize, r_l: usize) -> Result<DropoutMask> {
    if r_l < 1 || r_l > n {
        return Err(Error::Config(format!(
            "tail mask prefix {r_l} out of range 1..={n}"
        )));
    }
    Ok(DropoutMask {
        bits: (0..n).map(|j| u8::from(j < r_l)).collect(),
    })
}

/// Each bit independently 0 with probability `eps`, 1 otherwise.
pub fn mask_random(n: usize, eps: f64, stream: &mut Stream) -> DropoutMask {
    assert!((0.0..=1.0).contains(&eps), "eps must lie in [0,1]");
    DropoutMask {
        bits: (0..n).map(|_| u8::from(stream.uniform() >= eps)).collect(),
    }
}

/// The mask for one channel state: deterministic for tail states, a fresh
/// realization for random states.
pub fn mask_for_state(n: usize, state: &ChannelState, stream: &mut Stream) -> Result<DropoutMask> {
    match state {
        ChannelState::Tail { r } => mask_tail(n, *r),
        ChannelState::Random { eps } => Ok(mask_random(n, *eps, stream)),
    }
}

/// Zeroes masked columns; surviving entries pass through unscaled.
pub fn apply_mask(y: &Matrix, d: &DropoutMask) -> Result<Matrix> {
    if y.cols() != d.len() {
        return Err(Error::Config(format!(
            "mask of length {} applied to {} columns",
            d.len(),
            y.cols()
        )));
    }
    Ok(mask_columns(y, &d.bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngFactory;

    #[test]
    fn sigma_closed_form_values() {
        // 0 dB at rate 1/2: sigma^2 = 1/(2 * 0.5 * 1) = 1.
        assert_eq!(sigma_from_ebn0(0.0, 0.5).unwrap(), 1.0);
        // 1 dB at rate 1/2: sigma^2 = 10^-0.1.
        let sigma = sigma_from_ebn0(1.0, 0.5).unwrap();
        assert!((sigma * sigma - 10f64.powf(-0.1)).abs() < 1e-15);
        assert!((sigma - 0.8912509381337456).abs() < 1e-12);
    }

    #[test]
    fn sigma_monotone_decreasing_in_snr() {
        let mut prev = f64::INFINITY;
        for db in [-10.0, 0.0, 10.0, 20.0, 40.0, 60.0] {
            let s = sigma_from_ebn0(db, 0.5).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn sigma_rejects_nonpositive_rate() {
        assert!(matches!(sigma_from_ebn0(0.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(sigma_from_ebn0(0.0, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn awgn_zero_sigma_is_identity() {
        let x = Matrix::from_rows(&[&[1.0, -2.0, 3.0]]);
        let mut s = RngFactory::new(1).stream("awgn");
        assert_eq!(awgn(&x, 0.0, &mut s), x);
    }

    #[test]
    fn awgn_is_seed_deterministic() {
        let x = Matrix::zeros(10, 10);
        let f = RngFactory::new(2);
        let a = awgn(&x, 1.5, &mut f.stream("z"));
        let b = awgn(&x, 1.5, &mut f.stream("z"));
        assert_eq!(a, b);
    }

    #[test]
    fn awgn_sample_moments() {
        let n = 1_000_000usize;
        let sigma = 0.8;
        let x = Matrix::zeros(n / 100, 100);
        let mut s = RngFactory::new(3).stream("awgn-mom");
        let y = awgn(&x, sigma, &mut s);
        let mean: f64 = y.as_slice().iter().sum::<f64>() / n as f64;
        let var: f64 = y.as_slice().iter().map(|v| v * v).sum::<f64>() / n as f64 - mean * mean;
        assert!(mean.abs() < 5.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        assert!((var - sigma * sigma).abs() < 0.01 * sigma * sigma, "var {var}");
    }

    #[test]
    fn sample_state_degenerate() {
        let mut s = RngFactory::new(4).stream("st");
        for _ in 0..50 {
            assert_eq!(sample_state(&[1.0, 0.0, 0.0, 0.0], &mut s), 1);
        }
    }

    fn check_frequencies(p: &[f64], draws: usize, seed: u64) {
        let mut s = RngFactory::new(seed).stream("freq");
        let mut counts = vec![0usize; p.len()];
        for _ in 0..draws {
            counts[sample_state(p, &mut s) - 1] += 1;
        }
        for (l, &pl) in p.iter().enumerate() {
            let freq = counts[l] as f64 / draws as f64;
            let bound = 3.0 * (pl * (1.0 - pl) / draws as f64).sqrt();
            assert!(
                (freq - pl).abs() <= bound.max(1e-9),
                "state {l}: freq {freq} vs p {pl} (bound {bound})"
            );
        }
    }

    #[test]
    fn sample_state_uniform_frequencies() {
        check_frequencies(&[0.25, 0.25, 0.25, 0.25], 100_000, 5);
    }

    #[test]
    fn sample_state_skewed_frequencies() {
        check_frequencies(&[0.8, 0.1, 0.05, 0.05], 100_000, 6);
    }

    #[test]
    fn mask_tail_cases() {
        assert_eq!(mask_tail(24, 24).unwrap().bits(), &[1u8; 24][..]);
        let m = mask_tail(24, 15).unwrap();
        assert_eq!(m.ones(), 15);
        assert!(m.bits()[..15].iter().all(|&b| b == 1));
        assert!(m.bits()[15..].iter().all(|&b| b == 0));
        assert_eq!(mask_tail(4, 1).unwrap().bits(), &[1, 0, 0, 0]);
        assert!(mask_tail(24, 0).is_err());
        assert!(mask_tail(24, 25).is_err());
    }

    #[test]
    fn mask_tail_is_deterministic() {
        assert_eq!(mask_tail(24, 18).unwrap(), mask_tail(24, 18).unwrap());
    }

    #[test]
    fn mask_random_extremes() {
        let f = RngFactory::new(7);
        let m0 = mask_random(24, 0.0, &mut f.stream("m"));
        assert_eq!(m0.ones(), 24);
        let m1 = mask_random(24, 1.0, &mut f.stream("m"));
        assert_eq!(m1.ones(), 0);
    }

    #[test]
    fn mask_random_zero_fraction() {
        let eps = 3.0 / 8.0;
        let masks = 100_000usize;
        let n = 24;
        let mut s = RngFactory::new(8).stream("mr");
        let mut zeros = 0usize;
        for _ in 0..masks {
            zeros += n - mask_random(n, eps, &mut s).ones();
        }
        let total = (masks * n) as f64;
        let frac = zeros as f64 / total;
        let bound = 3.0 * (eps * (1.0 - eps) / total).sqrt();
        assert!((frac - eps).abs() <= bound, "frac {frac} bound {bound}");
    }

    #[test]
    fn apply_mask_cases() {
        let y = Matrix::from_rows(&[&[5.0, 7.0, -2.0]]);
        let ones = DropoutMask::all_ones(3);
        assert_eq!(apply_mask(&y, &ones).unwrap(), y);
        let zeros = DropoutMask::from_bits(vec![0, 0, 0]);
        assert_eq!(
            apply_mask(&y, &zeros).unwrap().row(0),
            &[0.0, 0.0, 0.0]
        );
        let mixed = DropoutMask::from_bits(vec![1, 0, 1]);
        assert_eq!(apply_mask(&y, &mixed).unwrap().row(0), &[5.0, 0.0, -2.0]);
        assert!(apply_mask(&y, &DropoutMask::all_ones(4)).is_err());
    }

    #[test]
    fn tail_mask_keeps_prefix_bit_identical() {
        let mut s = RngFactory::new(9).stream("prefix");
        let data: Vec<f64> = (0..48).map(|_| s.normal()).collect();
        let y = Matrix::from_vec(2, 24, data).unwrap();
        let masked = apply_mask(&y, &mask_tail(24, 15).unwrap()).unwrap();
        for r in 0..2 {
            assert_eq!(&masked.row(r)[..15], &y.row(r)[..15]);
            assert!(masked.row(r)[15..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn erasure_model_validation() {
        let ok = ErasureModel::Tail {
            p: vec![0.8, 0.1, 0.05, 0.05],
            r: vec![15, 18, 21, 24],
        };
        ok.validate(24).unwrap();
        assert_eq!(ok.state_count(), 4);
        assert_eq!(ok.state(1), ChannelState::Tail { r: 15 });

        let bad_sum = ErasureModel::Tail {
            p: vec![0.5, 0.1],
            r: vec![10, 20],
        };
        assert!(bad_sum.validate(24).is_err());

        let bad_order = ErasureModel::Tail {
            p: vec![0.5, 0.5],
            r: vec![20, 10],
        };
        assert!(bad_order.validate(24).is_err());

        let bad_range = ErasureModel::Tail {
            p: vec![0.5, 0.5],
            r: vec![10, 30],
        };
        assert!(bad_range.validate(24).is_err());

        let ok_rand = ErasureModel::Random {
            p: vec![0.25, 0.25, 0.25, 0.25],
            eps: vec![0.375, 0.25, 0.125, 0.0],
        };
        ok_rand.validate(24).unwrap();
        assert_eq!(ok_rand.state(4), ChannelState::Random { eps: 0.0 });

        let bad_eps = ErasureModel::Random {
            p: vec![1.0],
            eps: vec![1.5],
        };
        assert!(bad_eps.validate(24).is_err());
    }
}
