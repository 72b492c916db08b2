//! Run-configuration files and the built-in experiment presets.
//!
//! Configs are TOML with explicit keys; unknown keys are rejected rather
//! than silently ignored, and the fully resolved config (defaults applied,
//! overrides merged) can be echoed back as TOML. `--set a.b.c=value`
//! overrides merge into the parsed document before validation, so typos in
//! overrides are caught the same way as typos in the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ErasureModel;
use crate::codec::PowerConstraint;
use crate::evaluator::EvalConfig;
use crate::nn::AdamHyper;
use crate::trainer::{DropoutSpec, TrainConfig};
use crate::{Error, Result};

pub const P1: [f64; 4] = [0.8, 0.1, 0.05, 0.05];
pub const P2: [f64; 4] = [0.25, 0.25, 0.25, 0.25];
pub const P3: [f64; 4] = [0.05, 0.05, 0.1, 0.8];
pub const R_GRID: [usize; 4] = [15, 18, 21, 24];
pub const EPS_GRID: [f64; 4] = [0.375, 0.25, 0.125, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Eval,
    Sweep,
    ExportCodebook,
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
}

impl std::str::FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            "fig6" => Ok(Figure::Fig6),
            "fig7" => Ok(Figure::Fig7),
            other => Err(Error::Config(format!(
                "unknown figure '{other}', expected fig2..fig7"
            ))),
        }
    }
}

/// The `[train]` section; every field has the standard default, so an
/// empty section trains the paper-scale rateless code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d_message_count")]
    pub message_count: usize,
    #[serde(default = "d_codeword_len")]
    pub codeword_len: usize,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_train_set_size")]
    pub train_set_size: usize,
    #[serde(default = "d_ebn0_train_db")]
    pub ebn0_train_db: f64,
    #[serde(default = "d_power_constraint")]
    pub power_constraint: PowerConstraint,
    #[serde(default = "d_dropout")]
    pub dropout: DropoutSpec,
    #[serde(default)]
    pub adam: AdamHyper,
}

fn d_message_count() -> usize {
    4096
}
fn d_codeword_len() -> usize {
    24
}
fn d_hidden() -> Vec<usize> {
    vec![500]
}
fn d_batch_size() -> usize {
    500
}
fn d_epochs() -> usize {
    100
}
fn d_train_set_size() -> usize {
    100_000
}
fn d_ebn0_train_db() -> f64 {
    1.0
}
fn d_power_constraint() -> PowerConstraint {
    PowerConstraint::Average
}
fn d_dropout() -> DropoutSpec {
    DropoutSpec::Tail {
        q: P1.to_vec(),
        r: R_GRID.to_vec(),
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            message_count: d_message_count(),
            codeword_len: d_codeword_len(),
            hidden: d_hidden(),
            batch_size: d_batch_size(),
            epochs: d_epochs(),
            train_set_size: d_train_set_size(),
            ebn0_train_db: d_ebn0_train_db(),
            power_constraint: d_power_constraint(),
            dropout: d_dropout(),
            adam: AdamHyper::default(),
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            message_count: self.message_count,
            codeword_len: self.codeword_len,
            hidden: self.hidden.clone(),
            batch_size: self.batch_size,
            epochs: self.epochs,
            train_set_size: self.train_set_size,
            ebn0_train_db: self.ebn0_train_db,
            power_constraint: self.power_constraint,
            dropout: self.dropout.clone(),
            adam: self.adam,
            seed,
        }
    }
}

/// The `[eval]` section; the channel keys are `model = "tail"|"random"`,
/// `p = [..]` and `r = [..]` or `eps = [..]` under `[eval.channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "d_channel")]
    pub channel: ErasureModel,
    #[serde(default = "d_grid")]
    pub ebn0_grid_db: Vec<f64>,
    #[serde(default = "d_trials")]
    pub trials_per_cell: u64,
    #[serde(default = "d_min_errors")]
    pub min_errors: u64,
    #[serde(default = "d_workers")]
    pub worker_count: usize,
}

fn d_channel() -> ErasureModel {
    ErasureModel::Tail {
        p: P1.to_vec(),
        r: R_GRID.to_vec(),
    }
}
fn d_grid() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
}
fn d_trials() -> u64 {
    100_000
}
fn d_min_errors() -> u64 {
    100
}
fn d_workers() -> usize {
    1
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            channel: d_channel(),
            ebn0_grid_db: d_grid(),
            trials_per_cell: d_trials(),
            min_errors: d_min_errors(),
            worker_count: d_workers(),
        }
    }
}

impl EvalSection {
    pub fn to_eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            channel: self.channel.clone(),
            ebn0_grid_db: self.ebn0_grid_db.clone(),
            trials_per_cell: self.trials_per_cell,
            min_errors: self.min_errors,
            seed,
            worker_count: self.worker_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    /// Input model path (sweep / export-codebook).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Output model path (train); defaults to `<out_dir>/model.raem`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<Figure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

fn d_seed() -> u64 {
    1
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Fills the section the mode needs, so the echo shows every default.
    pub fn normalize(&mut self) {
        match self.mode {
            Mode::Train => {
                if self.train.is_none() {
                    self.train = Some(TrainSection::default());
                }
            }
            Mode::Eval | Mode::Sweep => {
                if self.eval.is_none() {
                    self.eval = Some(EvalSection::default());
                }
            }
            Mode::ExportCodebook | Mode::Reproduce => {}
        }
    }

    /// The resolved config as TOML, defaults included.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a config file, merges `--set key=value` overrides, and
/// deserializes with unknown-key rejection.
pub fn load_run_config(path: &Path, sets: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("{} is not valid TOML: {e}", path.display())))?;
    apply_overrides(&mut value, sets)?;
    resolve(value)
}

pub fn resolve(value: toml::Value) -> Result<RunConfig> {
    let mut config: RunConfig = value
        .try_into()
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    config.normalize();
    Ok(config)
}

/// Merges dotted-path overrides into a TOML document. Values parse as TOML
/// fragments (`50`, `[1,2]`, `{kind="none"}`); anything that does not parse
/// is taken as a bare string.
pub fn apply_overrides(value: &mut toml::Value, sets: &[String]) -> Result<()> {
    for set in sets {
        let (path, raw) = set.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{set}' is not of the form key=value"))
        })?;
        let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("just inserted"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let parts: Vec<&str> = path.split('.').collect();
        let root = value
            .as_table_mut()
            .ok_or_else(|| Error::Config("config root is not a table".into()))?;
        insert_at(root, path, &parts, parsed)?;
    }
    Ok(())
}

fn insert_at(
    table: &mut toml::Table,
    full_path: &str,
    parts: &[&str],
    value: toml::Value,
) -> Result<()> {
    if parts.len() == 1 {
        table.insert(parts[0].to_string(), value);
        return Ok(());
    }
    let entry = table
        .entry(parts[0].to_string())
        .or_insert(toml::Value::Table(toml::Table::new()));
    let sub = entry.as_table_mut().ok_or_else(|| {
        Error::Config(format!(
            "override '{full_path}': '{}' is not a table",
            parts[0]
        ))
    })?;
    insert_at(sub, full_path, &parts[1..], value)
}

/// One training job inside a preset.
#[derive(Debug, Clone)]
pub struct PresetTrain {
    pub name: String,
    pub section: TrainSection,
}

/// One sweep inside a preset, referring to a trained model by name.
#[derive(Debug, Clone)]
pub struct PresetSweep {
    pub name: String,
    pub model: String,
    pub eval: EvalSection,
}

/// A figure reproduction: train what is missing, then run the sweeps.
#[derive(Debug, Clone)]
pub struct Preset {
    pub figure: Figure,
    pub description: &'static str,
    pub trains: Vec<PresetTrain>,
    pub sweeps: Vec<PresetSweep>,
}

fn cae_section() -> TrainSection {
    TrainSection {
        dropout: DropoutSpec::None,
        ..TrainSection::default()
    }
}

fn rae_tail_section(q: &[f64]) -> TrainSection {
    TrainSection {
        dropout: DropoutSpec::Tail {
            q: q.to_vec(),
            r: R_GRID.to_vec(),
        },
        ..TrainSection::default()
    }
}

fn rae_random_section(q: &[f64]) -> TrainSection {
    TrainSection {
        dropout: DropoutSpec::Random {
            q: q.to_vec(),
            eps: EPS_GRID.to_vec(),
        },
        ..TrainSection::default()
    }
}

fn tail_channel(p: &[f64], r: &[usize]) -> ErasureModel {
    ErasureModel::Tail {
        p: p.to_vec(),
        r: r.to_vec(),
    }
}

fn eval_tail(p: &[f64], r: &[usize], grid: &[f64]) -> EvalSection {
    EvalSection {
        channel: tail_channel(p, r),
        ebn0_grid_db: grid.to_vec(),
        ..EvalSection::default()
    }
}

/// Builds the preset for one figure. Presets are pure configuration: they
/// drive only the public train and sweep operations.
pub fn preset(figure: Figure) -> Preset {
    let full_grid: Vec<f64> = d_grid();
    let three_points = [3.0, 5.0, 7.0];
    match figure {
        Figure::Fig2 => Preset {
            figure,
            description: "per-state BLER vs Eb/N0 for the conventional AE and \
                          three rateless AEs (tail erasures)",
            trains: vec![
                PresetTrain { name: "cae".into(), section: cae_section() },
                PresetTrain { name: "rae-p1".into(), section: rae_tail_section(&P1) },
                PresetTrain { name: "rae-p2".into(), section: rae_tail_section(&P2) },
                PresetTrain { name: "rae-p3".into(), section: rae_tail_section(&P3) },
            ],
            sweeps: ["cae", "rae-p1", "rae-p2", "rae-p3"]
                .iter()
                .map(|m| PresetSweep {
                    name: format!("{m}-decomposed"),
                    model: (*m).into(),
                    eval: eval_tail(&P2, &R_GRID, &full_grid),
                })
                .collect(),
        },
        Figure::Fig3 => {
            let all_r: Vec<usize> = (15..=24).collect();
            let uniform = vec![0.1; 10];
            Preset {
                figure,
                description: "BLER vs received symbols at 3/5/7 dB, including \
                              prefix lengths unseen in training",
                trains: vec![
                    PresetTrain { name: "cae".into(), section: cae_section() },
                    PresetTrain { name: "rae-p3".into(), section: rae_tail_section(&P3) },
                ],
                sweeps: ["cae", "rae-p3"]
                    .iter()
                    .map(|m| PresetSweep {
                        name: format!("{m}-vs-r"),
                        model: (*m).into(),
                        eval: eval_tail(&uniform, &all_r, &three_points),
                    })
                    .collect(),
            }
        }
        Figure::Fig4 => {
            let mut sweeps = Vec::new();
            for (tag, p) in [("p1", &P1), ("p2", &P2), ("p3", &P3)] {
                sweeps.push(PresetSweep {
                    name: format!("cae-avg-{tag}"),
                    model: "cae".into(),
                    eval: eval_tail(p, &R_GRID, &full_grid),
                });
                sweeps.push(PresetSweep {
                    name: format!("rae-{tag}-avg"),
                    model: format!("rae-{tag}"),
                    eval: eval_tail(p, &R_GRID, &full_grid),
                });
            }
            Preset {
                figure,
                description: "averaged BLER vs Eb/N0 for matched rateless AEs \
                              against the conventional AE",
                trains: vec![
                    PresetTrain { name: "cae".into(), section: cae_section() },
                    PresetTrain { name: "rae-p1".into(), section: rae_tail_section(&P1) },
                    PresetTrain { name: "rae-p2".into(), section: rae_tail_section(&P2) },
                    PresetTrain { name: "rae-p3".into(), section: rae_tail_section(&P3) },
                ],
                sweeps,
            }
        }
        Figure::Fig5 => {
            let mismatches: [(&str, [f64; 4]); 4] = [
                ("matched", [0.05, 0.05, 0.1, 0.8]),
                ("mm1", [0.1, 0.1, 0.2, 0.6]),
                ("mm2", [0.05, 0.1, 0.15, 0.7]),
                ("mm3", [0.05, 0.1, 0.1, 0.75]),
            ];
            let mut sweeps = vec![PresetSweep {
                name: "cae-avg-p3".into(),
                model: "cae".into(),
                eval: eval_tail(&P3, &R_GRID, &full_grid),
            }];
            for (tag, p) in &mismatches {
                sweeps.push(PresetSweep {
                    name: format!("rae-p3-under-{tag}"),
                    model: "rae-p3".into(),
                    eval: eval_tail(p, &R_GRID, &full_grid),
                });
            }
            Preset {
                figure,
                description: "averaged BLER of the p3-trained rateless AE under \
                              mismatched channel state distributions",
                trains: vec![
                    PresetTrain { name: "cae".into(), section: cae_section() },
                    PresetTrain { name: "rae-p3".into(), section: rae_tail_section(&P3) },
                ],
                sweeps,
            }
        }
        Figure::Fig6 => {
            let fixed = |mut s: TrainSection| {
                s.power_constraint = PowerConstraint::Fixed;
                s
            };
            Preset {
                figure,
                description: "BLER vs received symbols under the fixed power \
                              constraint (rateless behavior degrades)",
                trains: vec![
                    PresetTrain { name: "cae-fixed".into(), section: fixed(cae_section()) },
                    PresetTrain {
                        name: "rae-fixed-p2".into(),
                        section: fixed(rae_tail_section(&P2)),
                    },
                ],
                sweeps: ["cae-fixed", "rae-fixed-p2"]
                    .iter()
                    .map(|m| PresetSweep {
                        name: format!("{m}-vs-r"),
                        model: (*m).into(),
                        eval: eval_tail(&P2, &R_GRID, &three_points),
                    })
                    .collect(),
            }
        }
        Figure::Fig7 => {
            let mut sweeps = Vec::new();
            for (tag, p) in [("p1", &P1), ("p2", &P2), ("p3", &P3)] {
                let channel = ErasureModel::Random {
                    p: p.to_vec(),
                    eps: EPS_GRID.to_vec(),
                };
                sweeps.push(PresetSweep {
                    name: format!("cae-m2-avg-{tag}"),
                    model: "cae".into(),
                    eval: EvalSection {
                        channel: channel.clone(),
                        ebn0_grid_db: full_grid.clone(),
                        ..EvalSection::default()
                    },
                });
                sweeps.push(PresetSweep {
                    name: format!("rae-m2-{tag}-avg"),
                    model: format!("rae-m2-{tag}"),
                    eval: EvalSection {
                        channel,
                        ebn0_grid_db: full_grid.clone(),
                        ..EvalSection::default()
                    },
                });
            }
            Preset {
                figure,
                description: "averaged BLER vs Eb/N0 under random erasures",
                trains: vec![
                    PresetTrain { name: "cae".into(), section: cae_section() },
                    PresetTrain { name: "rae-m2-p1".into(), section: rae_random_section(&P1) },
                    PresetTrain { name: "rae-m2-p2".into(), section: rae_random_section(&P2) },
                    PresetTrain { name: "rae-m2-p3".into(), section: rae_random_section(&P3) },
                ],
                sweeps,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_train_config_gets_full_defaults() {
        let (_d, path) = write_tmp("mode = \"train\"\n");
        let cfg = load_run_config(&path, &[]).unwrap();
        assert_eq!(cfg.mode, Mode::Train);
        assert_eq!(cfg.seed, 1);
        let train = cfg.train.as_ref().unwrap();
        assert_eq!(train.message_count, 4096);
        assert_eq!(train.codeword_len, 24);
        assert_eq!(train.hidden, vec![500]);
        assert_eq!(train.batch_size, 500);
        assert_eq!(train.train_set_size, 100_000);
        assert_eq!(train.ebn0_train_db, 1.0);
        // The paper-default run trains the rateless code matched to p1.
        assert_eq!(
            train.dropout,
            DropoutSpec::Tail {
                q: P1.to_vec(),
                r: R_GRID.to_vec()
            }
        );
        // The echo prints every resolved default.
        let echo = cfg.echo();
        assert!(echo.contains("message_count = 4096"), "{echo}");
        assert!(echo.contains("batch_size = 500"), "{echo}");
        assert!(echo.contains("alpha = 0.001"), "{echo}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let (_d, path) = write_tmp("mode = \"train\"\n[train]\nepochz = 3\n");
        let err = load_run_config(&path, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochz"), "{msg}");
    }

    #[test]
    fn set_overrides_merge_and_are_validated() {
        let (_d, path) = write_tmp("mode = \"train\"\n[train]\nepochs = 2\n");
        let cfg = load_run_config(
            &path,
            &[
                "train.epochs=7".into(),
                "train.hidden=[64]".into(),
                "seed=99".into(),
                "train.dropout={kind=\"none\"}".into(),
            ],
        )
        .unwrap();
        let train = cfg.train.as_ref().unwrap();
        assert_eq!(train.epochs, 7);
        assert_eq!(train.hidden, vec![64]);
        assert_eq!(cfg.seed, 99);
        assert_eq!(train.dropout, DropoutSpec::None);

        let err = load_run_config(&path, &["train.no_such_key=1".into()]).unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn eval_channel_keys_match_the_documented_names() {
        let (_d, path) = write_tmp(
            "mode = \"sweep\"\nmodel_path = \"m.raem\"\n\
             [eval]\nebn0_grid_db = [3.0, 5.0]\n\
             [eval.channel]\nmodel = \"tail\"\np = [0.8, 0.1, 0.05, 0.05]\nr = [15, 18, 21, 24]\n",
        );
        let cfg = load_run_config(&path, &[]).unwrap();
        let eval = cfg.eval.as_ref().unwrap();
        assert_eq!(
            eval.channel,
            ErasureModel::Tail {
                p: P1.to_vec(),
                r: R_GRID.to_vec()
            }
        );
        assert_eq!(eval.trials_per_cell, 100_000);
        assert_eq!(eval.min_errors, 100);

        let (_d2, path2) = write_tmp(
            "mode = \"sweep\"\n[eval.channel]\nmodel = \"random\"\np = [0.25,0.25,0.25,0.25]\neps = [0.375,0.25,0.125,0.0]\n",
        );
        let cfg2 = load_run_config(&path2, &[]).unwrap();
        assert!(matches!(
            cfg2.eval.as_ref().unwrap().channel,
            ErasureModel::Random { .. }
        ));
    }

    #[test]
    fn bad_channel_keys_rejected() {
        let (_d, path) = write_tmp(
            "mode = \"sweep\"\n[eval.channel]\nmodel = \"tail\"\np = [1.0]\neps = [0.5]\n",
        );
        // Tail channels take `r`, not `eps`.
        assert!(load_run_config(&path, &[]).is_err());
    }

    #[test]
    fn presets_reference_only_their_own_models() {
        for figure in [
            Figure::Fig2,
            Figure::Fig3,
            Figure::Fig4,
            Figure::Fig5,
            Figure::Fig6,
            Figure::Fig7,
        ] {
            let p = preset(figure);
            assert!(!p.trains.is_empty());
            assert!(!p.sweeps.is_empty());
            for sweep in &p.sweeps {
                assert!(
                    p.trains.iter().any(|t| t.name == sweep.model),
                    "{:?}: sweep {} references unknown model {}",
                    figure,
                    sweep.name,
                    sweep.model
                );
                // Preset channels must be valid for the code length.
                sweep
                    .eval
                    .channel
                    .validate(sweep.eval.channel.state_count().max(24))
                    .unwrap();
            }
            for train in &p.trains {
                train.section.to_train_config(1).validate().unwrap();
            }
        }
    }

    #[test]
    fn fig6_trains_fixed_power_models() {
        let p = preset(Figure::Fig6);
        for t in &p.trains {
            assert_eq!(t.section.power_constraint, PowerConstraint::Fixed);
        }
    }

    #[test]
    fn fig7_uses_random_erasures() {
        let p = preset(Figure::Fig7);
        for s in &p.sweeps {
            assert!(matches!(s.eval.channel, ErasureModel::Random { .. }));
        }
    }
}
