//! Monte Carlo block-error-rate estimation over the cascaded channel.
//!
//! Evaluation works per cell: one (channel state, Eb/N0) pair, one seeded
//! stream triple (messages / noise / masks) derived from the cell label, so
//! results never depend on how cells are scheduled over workers, and adding
//! grid points never perturbs existing cells. Within a cell: draw a uniform
//! message, add AWGN to its codeword, erase (tail states use the
//! deterministic prefix mask, random states draw a fresh mask per
//! codeword), zero-fill, decode, count errors.
//!
//! Stopping rule: a cell ends at `trials` trials, or once at least 10^4
//! trials are done and `min_errors` errors have been seen, whichever comes
//! first. Decisions fall on fixed batch boundaries, so trial counts are a
//! pure function of the seed and the rule.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{mask_random, mask_tail, sigma_from_ebn0, ChannelState, ErasureModel};
use crate::codec::{AeModel, Codebook, PowerConstraint};
use crate::matrix::Matrix;
use crate::nn::ops::{mask_columns_assign, mask_row_assign};
use crate::rng::{RngFactory, Stream};
use crate::{Error, Result};

/// Trials processed per decode batch; also the stop-rule granularity.
const EVAL_BATCH: usize = 1024;

/// Early stopping never triggers before this many trials.
const EARLY_STOP_FLOOR: u64 = 10_000;

/// Cells with fewer errors than this are flagged unreliable in outputs.
pub const RELIABLE_MIN_ERRORS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub channel: ErasureModel,
    pub ebn0_grid_db: Vec<f64>,
    pub trials_per_cell: u64,
    pub min_errors: u64,
    pub seed: u64,
    pub worker_count: usize,
}

impl EvalConfig {
    pub fn validate(&self, codeword_len: usize) -> Result<()> {
        self.channel.validate(codeword_len)?;
        if self.ebn0_grid_db.is_empty() {
            return Err(Error::Config("ebn0 grid is empty".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::Config("trials_per_cell must be >= 1".into()));
        }
        if self.worker_count == 0 {
            return Err(Error::Config("worker_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Error counts for one (state, Eb/N0) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlerEstimate {
    pub state: ChannelState,
    pub ebn0_db: f64,
    pub errors: u64,
    pub trials: u64,
}

impl BlerEstimate {
    pub fn bler(&self) -> f64 {
        self.errors as f64 / self.trials as f64
    }

    /// 95% normal-approximation half width: `1.96 sqrt(b(1-b)/trials)`.
    pub fn half_width_95(&self) -> f64 {
        let b = self.bler();
        1.96 * (b * (1.0 - b) / self.trials as f64).sqrt()
    }

    pub fn reliable(&self) -> bool {
        self.errors >= RELIABLE_MIN_ERRORS
    }

    /// Combines two counter sets for the same cell (associative and
    /// commutative, so partitioning Monte Carlo work is order-free).
    pub fn merged(&self, other: &BlerEstimate) -> BlerEstimate {
        assert_eq!(self.state, other.state);
        assert_eq!(self.ebn0_db, other.ebn0_db);
        BlerEstimate {
            state: self.state,
            ebn0_db: self.ebn0_db,
            errors: self.errors + other.errors,
            trials: self.trials + other.trials,
        }
    }
}

/// Stable per-cell stream label: tail states key on `r`, random states on
/// the exact bits of `eps`; Eb/N0 enters in millidecibels.
pub fn cell_label(state: &ChannelState, ebn0_db: f64) -> String {
    let millidb = (ebn0_db * 1000.0).round() as i64;
    match state {
        ChannelState::Tail { r } => format!("cell/tail-r{r}/{millidb}"),
        ChannelState::Random { eps } => {
            format!("cell/random-eps{:016x}/{millidb}", eps.to_bits())
        }
    }
}

/// Applies one channel state to a batch of noisy codewords, in place.
/// Tail states reuse the training-side deterministic prefix mask; random
/// states draw one fresh mask per codeword.
pub(crate) fn erase_in_place(
    y: &mut Matrix,
    state: &ChannelState,
    mask_stream: &mut Stream,
) -> Result<()> {
    match state {
        ChannelState::Tail { r } => {
            let mask = mask_tail(y.cols(), *r)?;
            mask_columns_assign(y, mask.bits());
        }
        ChannelState::Random { eps } => {
            for row in 0..y.rows() {
                let mask = mask_random(y.cols(), *eps, mask_stream);
                mask_row_assign(y.row_mut(row), mask.bits());
            }
        }
    }
    Ok(())
}

/// Estimates BLER for one cell. Streams are derived from
/// `factory.stream(label + "/msg" | "/noise" | "/mask")`, so two calls with
/// the same factory and label are bit-identical.
pub fn bler_cell(
    model: &AeModel,
    state: &ChannelState,
    ebn0_db: f64,
    trials: u64,
    min_errors: u64,
    factory: &RngFactory,
    label: &str,
) -> Result<BlerEstimate> {
    let codebook = model.extract_codebook()?;
    bler_cell_with_codebook(
        model, &codebook, state, ebn0_db, trials, min_errors, factory, label,
    )
}

#[allow(clippy::too_many_arguments)]
fn bler_cell_with_codebook(
    model: &AeModel,
    codebook: &Codebook,
    state: &ChannelState,
    ebn0_db: f64,
    trials: u64,
    min_errors: u64,
    factory: &RngFactory,
    label: &str,
) -> Result<BlerEstimate> {
    if let ChannelState::Tail { r } = state {
        if *r < 1 || *r > model.codeword_len() {
            return Err(Error::Config(format!(
                "tail state r={r} out of range 1..={}",
                model.codeword_len()
            )));
        }
    }
    let n = model.codeword_len();
    let m_count = model.message_count();
    let sigma = sigma_from_ebn0(ebn0_db, model.rate())?;

    let mut msg_stream = factory.stream(&format!("{label}/msg"));
    let mut noise_stream = factory.stream(&format!("{label}/noise"));
    let mut mask_stream = factory.stream(&format!("{label}/mask"));

    let mut done = 0u64;
    let mut errors = 0u64;
    let mut msgs = Vec::with_capacity(EVAL_BATCH);

    while done < trials {
        let batch = EVAL_BATCH.min((trials - done) as usize);
        msgs.clear();
        let mut y = Matrix::zeros(batch, n);
        for row in 0..batch {
            let m = msg_stream.uniform_index(m_count) + 1;
            msgs.push(m);
            let yr = y.row_mut(row);
            yr.copy_from_slice(codebook.codeword(m));
            for v in yr.iter_mut() {
                *v += sigma * noise_stream.normal();
            }
        }
        erase_in_place(&mut y, state, &mut mask_stream)?;
        let decoded = model.decode_batch(&y);
        errors += decoded.iter().zip(&msgs).filter(|(d, m)| d != m).count() as u64;
        done += batch as u64;

        if done >= EARLY_STOP_FLOOR && errors >= min_errors {
            break;
        }
    }

    Ok(BlerEstimate {
        state: *state,
        ebn0_db,
        errors,
        trials: done,
    })
}

/// p-weighted average of per-state estimates at one Eb/N0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragePoint {
    pub ebn0_db: f64,
    pub bler: f64,
    pub ci95: f64,
    pub trials: u64,
    pub errors: u64,
}

/// `sum_l p_l * bler_l` over one estimate per state.
pub fn averaged_bler(cells: &[BlerEstimate], p: &[f64]) -> Result<f64> {
    if cells.len() != p.len() {
        return Err(Error::Config(format!(
            "{} cells for {} states",
            cells.len(),
            p.len()
        )));
    }
    let ebn0 = cells
        .first()
        .ok_or_else(|| Error::Config("no cells to average".into()))?
        .ebn0_db;
    if cells.iter().any(|c| c.ebn0_db != ebn0) {
        return Err(Error::Config("averaged cells must share one Eb/N0".into()));
    }
    Ok(cells.iter().zip(p).map(|(c, &pl)| pl * c.bler()).sum())
}

fn average_point(cells: &[BlerEstimate], p: &[f64]) -> Result<AveragePoint> {
    let bler = averaged_bler(cells, p)?;
    // Variance of a weighted sum of independent estimates.
    let var: f64 = cells
        .iter()
        .zip(p)
        .map(|(c, &pl)| {
            let se = c.half_width_95() / 1.96;
            pl * pl * se * se
        })
        .sum();
    Ok(AveragePoint {
        ebn0_db: cells[0].ebn0_db,
        bler,
        ci95: 1.96 * var.sqrt(),
        trials: cells.iter().map(|c| c.trials).sum(),
        errors: cells.iter().map(|c| c.errors).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub model_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub constraint: PowerConstraint,
    pub channel: ErasureModel,
}

impl SweepMeta {
    /// Changes iff the model bytes or the evaluation config change.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model_hash.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.config_hash.as_bytes());
        hex(&hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// One estimate per (state, Eb/N0), states outer, grid order inner.
    pub cells: Vec<BlerEstimate>,
    /// One p-weighted average per Eb/N0.
    pub averages: Vec<AveragePoint>,
    pub meta: SweepMeta,
}

impl SweepResult {
    pub fn cell(&self, state: &ChannelState, ebn0_db: f64) -> Option<&BlerEstimate> {
        self.cells
            .iter()
            .find(|c| c.state == *state && c.ebn0_db == ebn0_db)
    }

    /// The per-state estimates at one Eb/N0, in state order.
    pub fn cells_at(&self, ebn0_db: f64) -> Vec<&BlerEstimate> {
        self.cells.iter().filter(|c| c.ebn0_db == ebn0_db).collect()
    }
}

pub fn config_hash(eval: &EvalConfig) -> String {
    let bytes = serde_json::to_vec(eval).expect("eval config serializes");
    hex(&Sha256::digest(&bytes))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Evaluates every (state, Eb/N0) cell and the p-weighted averages.
/// Cells are distributed over `worker_count` threads; per-cell seeding
/// makes the numbers independent of the worker count.
pub fn sweep(model: &AeModel, eval: &EvalConfig) -> Result<SweepResult> {
    eval.validate(model.codeword_len())?;
    if !model.is_finalized() {
        return Err(Error::State(
            "sweep requires finalized codebook statistics".into(),
        ));
    }
    let codebook = model.extract_codebook()?;
    let factory = RngFactory::new(eval.seed);
    let states = eval.channel.states();

    let mut jobs: Vec<(ChannelState, f64)> = Vec::new();
    for state in &states {
        for &ebn0 in &eval.ebn0_grid_db {
            jobs.push((*state, ebn0));
        }
    }

    let run_cell = |(state, ebn0): &(ChannelState, f64)| -> Result<BlerEstimate> {
        bler_cell_with_codebook(
            model,
            &codebook,
            state,
            *ebn0,
            eval.trials_per_cell,
            eval.min_errors,
            &factory,
            &cell_label(state, *ebn0),
        )
    };

    let cells: Vec<BlerEstimate> = if eval.worker_count > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(eval.worker_count)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(run_cell).collect::<Result<Vec<_>>>()
        })?
    } else {
        jobs.iter().map(run_cell).collect::<Result<Vec<_>>>()?
    };

    let p = eval.channel.probabilities();
    let mut averages = Vec::with_capacity(eval.ebn0_grid_db.len());
    for &ebn0 in &eval.ebn0_grid_db {
        let at: Vec<BlerEstimate> = states
            .iter()
            .map(|s| {
                *cells
                    .iter()
                    .find(|c| c.state == *s && c.ebn0_db == ebn0)
                    .expect("cell computed above")
            })
            .collect();
        averages.push(average_point(&at, p)?);
    }

    Ok(SweepResult {
        cells,
        averages,
        meta: SweepMeta {
            model_hash: model.content_hash(),
            config_hash: config_hash(eval),
            seed: eval.seed,
            constraint: model.constraint(),
            channel: eval.channel.clone(),
        },
    })
}

/// CI-aware verdict for one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    CandidateLower,
    BaselineLower,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub state: ChannelState,
    pub ebn0_db: f64,
    pub baseline_bler: f64,
    pub candidate_bler: f64,
    /// `candidate / baseline`; absent when the baseline saw zero errors.
    pub ratio: Option<f64>,
    pub verdict: Dominance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub cells: Vec<CompareCell>,
}

/// Per-cell ratio table with CI-aware dominance verdicts. The two sweeps
/// must cover the same (state, Eb/N0) grid in the same order.
pub fn compare(baseline: &SweepResult, candidate: &SweepResult) -> Result<CompareReport> {
    if baseline.cells.len() != candidate.cells.len() {
        return Err(Error::Config(format!(
            "grids differ: {} vs {} cells",
            baseline.cells.len(),
            candidate.cells.len()
        )));
    }
    let mut cells = Vec::with_capacity(baseline.cells.len());
    for (b, c) in baseline.cells.iter().zip(&candidate.cells) {
        if b.state != c.state || b.ebn0_db != c.ebn0_db {
            return Err(Error::Config(format!(
                "grid mismatch at ({}, {} dB) vs ({}, {} dB)",
                b.state, b.ebn0_db, c.state, c.ebn0_db
            )));
        }
        let verdict = if c.bler() + c.half_width_95() < b.bler() - b.half_width_95() {
            Dominance::CandidateLower
        } else if b.bler() + b.half_width_95() < c.bler() - c.half_width_95() {
            Dominance::BaselineLower
        } else {
            Dominance::Inconclusive
        };
        cells.push(CompareCell {
            state: b.state,
            ebn0_db: b.ebn0_db,
            baseline_bler: b.bler(),
            candidate_bler: c.bler(),
            ratio: (b.errors > 0).then(|| c.bler() / b.bler()),
            verdict,
        });
    }
    Ok(CompareReport { cells })
}
