//! Autoencoder channel codes for cascaded AWGN + erasure channels.
//!
//! The crate trains dense-network encoder/decoder pairs end to end over a
//! noisy channel, optionally with randomized erasure dropout so that the
//! learned code degrades gracefully when only a prefix (or a random subset)
//! of the codeword symbols is received. It also provides the Monte Carlo
//! machinery to estimate block error rates over the same channel, and a
//! versioned binary model format so every result is reproducible from a
//! config and a seed.
//!
//! Module map:
//! - [`matrix`], [`nn`]: the minimal fp64 dense-network engine (forward,
//!   analytic backward, Adam, batch-statistics power normalization).
//! - [`rng`]: seeded, labeled ChaCha8 streams; all randomness flows
//!   through these.
//! - [`channel`]: AWGN sampling, erasure models, dropout masks.
//! - [`codec`]: the encoder/decoder pair, power constraints, codebook
//!   extraction.
//! - [`trainer`]: the batch training loop with randomized per-batch
//!   dropout.
//! - [`evaluator`]: per-state BLER cells, sweeps, weighted averages,
//!   comparisons.
//! - [`io`]: model persistence and results emission.
//! - [`config`]: run-configuration files and the built-in experiment
//!   presets.

pub mod channel;
pub mod codec;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
