//! Model persistence and results emission.
//!
//! A model file is a single binary: an 8-byte magic, a little-endian u32
//! format version, a length-prefixed JSON header (shapes, the full training
//! config, seed, hashes), the raw fp64 parameter blocks in canonical order
//! (encoder layers then decoder layers, weights row-major then bias, then
//! the normalization statistics), and a trailing SHA-256 over everything
//! before it. Loading verifies magic, version, and checksum before parsing,
//! and revalidates the shape chain before returning; round trips are
//! bit-exact.
//!
//! Results go out twice: a plot-ready CSV with one row per cell plus
//! `state_param=avg` rows, and a metadata-complete JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{AeModel, Codebook, PowerConstraint};
use crate::evaluator::{hex, SweepResult, RELIABLE_MIN_ERRORS};
use crate::matrix::Matrix;
use crate::nn::{BatchNormPowerState, BnMode, DenseParams, Mlp};
use crate::trainer::{TrainConfig, TrainReport};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RAEMODEL";
const FILE_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Everything a model file carries besides the parameters themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: AeModel,
    pub train_config: TrainConfig,
    pub loss_trace_digest: String,
    /// How batch linear algebra was executed (informational; the kernels
    /// used here are single-threaded and deterministic).
    pub parallelism: String,
}

impl ModelArtifact {
    pub fn new(model: AeModel, train_config: TrainConfig, report: &TrainReport) -> Self {
        ModelArtifact {
            model,
            train_config,
            loss_trace_digest: loss_trace_digest(&report.epoch_loss),
            parallelism: "single-threaded deterministic gemm".into(),
        }
    }

    pub fn config_hash(&self) -> String {
        train_config_hash(&self.train_config)
    }
}

/// SHA-256 of the little-endian bytes of the per-epoch loss trace.
pub fn loss_trace_digest(trace: &[f64]) -> String {
    let mut h = Sha256::new();
    for &v in trace {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// SHA-256 of the canonical JSON serialization of a training config.
pub fn train_config_hash(cfg: &TrainConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("train config serializes");
    hex(&Sha256::digest(&bytes))
}

pub fn file_hash(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct NormHeader {
    momentum: f64,
    mode: BnMode,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderV1 {
    format_version: u32,
    message_count: usize,
    codeword_len: usize,
    hidden: Vec<usize>,
    power_constraint: PowerConstraint,
    encoder_shapes: Vec<[usize; 2]>,
    decoder_shapes: Vec<[usize; 2]>,
    norm: Option<NormHeader>,
    train_config: TrainConfig,
    seed: u64,
    loss_trace_digest: String,
    config_hash: String,
    parallelism: String,
}

fn shapes(mlp: &Mlp) -> Vec<[usize; 2]> {
    mlp.layers
        .iter()
        .map(|l| [l.fan_in(), l.fan_out()])
        .collect()
}

pub fn model_to_bytes(artifact: &ModelArtifact) -> Vec<u8> {
    let model = &artifact.model;
    let header = HeaderV1 {
        format_version: model.format_version,
        message_count: model.message_count(),
        codeword_len: model.codeword_len(),
        hidden: model.hidden().to_vec(),
        power_constraint: model.constraint(),
        encoder_shapes: shapes(&model.encoder),
        decoder_shapes: shapes(&model.decoder),
        norm: model.norm.as_ref().map(|s| NormHeader {
            momentum: s.momentum,
            mode: s.mode,
        }),
        train_config: artifact.train_config.clone(),
        seed: artifact.train_config.seed,
        loss_trace_digest: artifact.loss_trace_digest.clone(),
        config_hash: artifact.config_hash(),
        parallelism: artifact.parallelism.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);

    for layer in model.encoder.layers.iter().chain(&model.decoder.layers) {
        for &v in layer.weights.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &layer.bias {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(state) = &model.norm {
        for &v in state.running_mean.iter().chain(&state.running_var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFile(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect())
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelArtifact> {
    if bytes.len() < MAGIC.len() + 4 + 8 + CHECKSUM_LEN {
        return Err(Error::ModelFile("file too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::ModelFile("bad magic; not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("sized"));
    if version > FILE_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {version} (this build reads up to {FILE_VERSION})"
        )));
    }

    let body_len = bytes.len() - CHECKSUM_LEN;
    let expected = Sha256::digest(&bytes[..body_len]);
    if expected.as_slice() != &bytes[body_len..] {
        return Err(Error::ModelFile("checksum mismatch; file corrupted".into()));
    }

    let mut r = Reader {
        bytes: &bytes[..body_len],
        pos: 12,
    };
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("sized")) as usize;
    let header: HeaderV1 = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::ModelFile(format!("malformed header: {e}")))?;

    let mut read_mlp = |shapes: &[[usize; 2]]| -> Result<Mlp> {
        let mut layers = Vec::with_capacity(shapes.len());
        for &[fan_in, fan_out] in shapes {
            let weights = Matrix::from_vec(fan_in, fan_out, r.f64_vec(fan_in * fan_out)?)?;
            let bias = r.f64_vec(fan_out)?;
            layers.push(DenseParams { weights, bias });
        }
        Ok(Mlp::new(layers))
    };
    let encoder = read_mlp(&header.encoder_shapes)?;
    let decoder = read_mlp(&header.decoder_shapes)?;

    let norm = match &header.norm {
        Some(nh) => {
            let running_mean = r.f64_vec(header.codeword_len)?;
            let running_var = r.f64_vec(header.codeword_len)?;
            Some(BatchNormPowerState {
                running_mean,
                running_var,
                momentum: nh.momentum,
                mode: nh.mode,
            })
        }
        None => None,
    };
    if r.pos != body_len {
        return Err(Error::ModelFile(format!(
            "{} trailing payload bytes",
            body_len - r.pos
        )));
    }

    let model = AeModel::from_parts(
        header.message_count,
        header.codeword_len,
        header.hidden,
        encoder,
        decoder,
        header.power_constraint,
        norm,
        header.format_version,
    )
    .map_err(|e| Error::ModelFile(format!("invalid model content: {e}")))?;

    Ok(ModelArtifact {
        model,
        train_config: header.train_config,
        loss_trace_digest: header.loss_trace_digest,
        parallelism: header.parallelism,
    })
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, model_to_bytes(artifact))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path)
        .map_err(|e| Error::ModelFile(format!("cannot read {}: {e}", path.display())))?;
    model_from_bytes(&bytes)
}

/// Human-readable summary of a model file, for `inspect`.
pub fn describe_model(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::ModelFile(format!("cannot read {}: {e}", path.display())))?;
    let artifact = model_from_bytes(&bytes)?;
    let m = &artifact.model;
    let mut s = String::new();
    s.push_str(&format!("model file        {}\n", path.display()));
    s.push_str(&format!("file hash         {}\n", file_hash(&bytes)));
    s.push_str(&format!("content hash      {}\n", m.content_hash()));
    s.push_str(&format!("config hash       {}\n", artifact.config_hash()));
    s.push_str(&format!(
        "code              ({}, {}) with M = {} messages, rate {}\n",
        m.codeword_len(),
        m.bits_per_message(),
        m.message_count(),
        m.rate()
    ));
    s.push_str(&format!(
        "architecture      H = {} hidden layers, h = {:?}\n",
        m.hidden().len(),
        m.hidden()
    ));
    s.push_str(&format!("power constraint  {:?}\n", m.constraint()));
    s.push_str(&format!("finalized         {}\n", m.is_finalized()));
    s.push_str(&format!("seed              {}\n", artifact.train_config.seed));
    s.push_str(&format!("dropout           {:?}\n", artifact.train_config.dropout));
    s.push_str(&format!(
        "training          {} epochs, batch {}, set {}, Eb/N0 {} dB\n",
        artifact.train_config.epochs,
        artifact.train_config.batch_size,
        artifact.train_config.train_set_size,
        artifact.train_config.ebn0_train_db
    ));
    s.push_str(&format!("loss digest       {}\n", artifact.loss_trace_digest));
    s.push_str(&format!("parallelism       {}\n", artifact.parallelism));
    Ok(s)
}

fn constraint_str(c: PowerConstraint) -> &'static str {
    match c {
        PowerConstraint::Fixed => "fixed",
        PowerConstraint::Average => "average",
    }
}

fn channel_model_str(result: &SweepResult) -> &'static str {
    match result.meta.channel {
        crate::channel::ErasureModel::Tail { .. } => "tail",
        crate::channel::ErasureModel::Random { .. } => "random",
    }
}

fn state_param_str(state: &crate::channel::ChannelState) -> String {
    match state {
        crate::channel::ChannelState::Tail { r } => r.to_string(),
        crate::channel::ChannelState::Random { eps } => format!("{eps}"),
    }
}

/// One row per cell plus one `state_param=avg` row per Eb/N0.
pub fn sweep_csv(result: &SweepResult) -> String {
    let model_id = &result.meta.model_hash[..16];
    let constraint = constraint_str(result.meta.constraint);
    let channel = channel_model_str(result);
    let mut out = String::from(
        "model_id,constraint,channel_model,state_param,ebn0_db,trials,errors,bler,ci95\n",
    );
    for c in &result.cells {
        out.push_str(&format!(
            "{model_id},{constraint},{channel},{},{},{},{},{:.6e},{:.6e}\n",
            state_param_str(&c.state),
            c.ebn0_db,
            c.trials,
            c.errors,
            c.bler(),
            c.half_width_95()
        ));
    }
    for a in &result.averages {
        out.push_str(&format!(
            "{model_id},{constraint},{channel},avg,{},{},{},{:.6e},{:.6e}\n",
            a.ebn0_db, a.trials, a.errors, a.bler, a.ci95
        ));
    }
    out
}

#[derive(Serialize)]
struct JsonCell {
    state_param: String,
    ebn0_db: f64,
    trials: u64,
    errors: u64,
    bler: f64,
    ci95: f64,
    reliable: bool,
}

#[derive(Serialize)]
struct JsonSweep<'a> {
    meta: &'a crate::evaluator::SweepMeta,
    fingerprint: String,
    cells: Vec<JsonCell>,
    averages: &'a [crate::evaluator::AveragePoint],
}

/// Metadata-complete JSON companion to the CSV.
pub fn sweep_json(result: &SweepResult) -> String {
    let doc = JsonSweep {
        meta: &result.meta,
        fingerprint: result.meta.fingerprint(),
        cells: result
            .cells
            .iter()
            .map(|c| JsonCell {
                state_param: state_param_str(&c.state),
                ebn0_db: c.ebn0_db,
                trials: c.trials,
                errors: c.errors,
                bler: c.bler(),
                ci95: c.half_width_95(),
                reliable: c.errors >= RELIABLE_MIN_ERRORS,
            })
            .collect(),
        averages: &result.averages,
    };
    serde_json::to_string_pretty(&doc).expect("sweep serializes")
}

pub fn write_sweep(result: &SweepResult, csv_path: &Path, json_path: &Path) -> Result<()> {
    for p in [csv_path, json_path] {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(csv_path, sweep_csv(result))?;
    fs::write(json_path, sweep_json(result))?;
    Ok(())
}

pub fn write_train_report(report: &TrainReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(
        path,
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    Ok(())
}

/// Codebook as CSV with header `m,x1..xn`; 17 significant digits, which
/// round-trips fp64 exactly.
pub fn codebook_csv(cb: &Codebook) -> String {
    let n = cb.matrix().cols();
    let mut out = String::from("m");
    for j in 1..=n {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for m in 1..=cb.message_count() {
        out.push_str(&m.to_string());
        for &v in cb.codeword(m) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, codebook_csv(cb))?;
    Ok(())
}
