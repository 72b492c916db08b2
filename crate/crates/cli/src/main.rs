//! `rae` — train, evaluate, and persist autoencoder channel codes for
//! cascaded AWGN + erasure channels.
//!
//! Exit codes: 0 success, 2 configuration error, 3 model-file error,
//! 4 numeric abort. `RAE_THREADS` caps evaluation worker counts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rateless_ae::channel::ErasureModel;
use rateless_ae::config::{
    self, load_run_config, Figure, Mode, Preset, EPS_GRID, P1, R_GRID,
};
use rateless_ae::evaluator::{sweep, SweepResult};
use rateless_ae::io::{
    describe_model, load_model, save_model, train_config_hash, write_codebook, write_sweep,
    write_train_report, ModelArtifact,
};
use rateless_ae::trainer::{
    loss_curve_monotone_check, train, DropoutSpec, LossCurveCheck, TrainError,
};
use rateless_ae::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rae",
    version,
    about = "Rateless autoencoder channel codes: training, BLER evaluation, persistence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run-configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-path config overrides, e.g. --set train.epochs=20
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Dropout shorthand: none, tail, or random (standard class grids).
        #[arg(long)]
        dropout: Option<String>,
    },
    /// Monte Carlo BLER sweep of a trained model over a channel grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trials per (state, Eb/N0) cell; overrides the config file.
        #[arg(long)]
        trials: Option<u64>,
        /// Worker threads for cell evaluation.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Write the full codebook of a trained model as CSV.
    ExportCodebook {
        model: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the metadata embedded in a model file or results JSON.
    Inspect { file: PathBuf },
    /// Reproduce a full experiment: train the needed models (cached by
    /// config hash), then run its sweeps.
    Reproduce {
        /// One of fig2..fig7.
        figure: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            sets,
            dropout,
        } => cmd_train(&config, seed, out, &sets, dropout.as_deref()),
        Command::Sweep {
            config,
            seed,
            out,
            trials,
            workers,
            sets,
        } => cmd_sweep(&config, seed, out, trials, workers, &sets),
        Command::ExportCodebook { model, out } => cmd_export_codebook(&model, out.as_deref()),
        Command::Inspect { file } => cmd_inspect(&file),
        Command::Reproduce {
            figure,
            seed,
            out,
            trials,
            workers,
            sets,
        } => cmd_reproduce(&figure, seed, out, trials, workers, &sets),
    }
}

/// `RAE_THREADS` caps any requested worker count.
fn cap_workers(requested: usize) -> usize {
    match std::env::var("RAE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(cap) if cap >= 1 => requested.min(cap),
        _ => requested,
    }
}

fn dropout_shorthand(kind: &str) -> Result<DropoutSpec> {
    match kind {
        "none" => Ok(DropoutSpec::None),
        "tail" => Ok(DropoutSpec::Tail {
            q: P1.to_vec(),
            r: R_GRID.to_vec(),
        }),
        "random" => Ok(DropoutSpec::Random {
            q: P1.to_vec(),
            eps: EPS_GRID.to_vec(),
        }),
        other => Err(Error::Config(format!(
            "unknown dropout shorthand '{other}', expected none|tail|random"
        ))),
    }
}

fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    sets: &[String],
    dropout: Option<&str>,
) -> Result<()> {
    let mut run_config = load_run_config(config_path, sets)?;
    if run_config.mode != Mode::Train {
        return Err(Error::Config(format!(
            "config mode is {:?}, expected train",
            run_config.mode
        )));
    }
    if let Some(s) = seed {
        run_config.seed = s;
    }
    if let Some(dir) = out {
        run_config.out_dir = dir;
    }
    if let Some(kind) = dropout {
        run_config.train.as_mut().expect("normalized").dropout = dropout_shorthand(kind)?;
    }

    println!("# resolved configuration\n{}", run_config.echo());
    let train_cfg = run_config
        .train
        .as_ref()
        .expect("normalized")
        .to_train_config(run_config.seed);
    let model_path = run_config
        .model_out
        .clone()
        .unwrap_or_else(|| run_config.out_dir.join("model.raem"));

    let (model, report) = match train(&train_cfg) {
        Ok(pair) => pair,
        Err(TrainError::NonFinite {
            epoch,
            batch,
            reason,
            checkpoint,
        }) => {
            if let Some(boxed) = checkpoint {
                let (model, report) = *boxed;
                let rescue = model_path.with_extension("lastgood.raem");
                save_model(
                    &ModelArtifact::new(model, train_cfg.clone(), &report),
                    &rescue,
                )?;
                eprintln!("last good checkpoint written to {}", rescue.display());
            }
            return Err(Error::Numeric(format!(
                "training aborted at epoch {epoch}, batch {batch}: {reason}"
            )));
        }
        Err(TrainError::Invalid(e)) => return Err(e),
    };

    let artifact = ModelArtifact::new(model, train_cfg, &report);
    save_model(&artifact, &model_path)?;
    let report_path = model_path.with_extension("report.json");
    write_train_report(&report, &report_path)?;

    println!("model   {}", model_path.display());
    println!("report  {}", report_path.display());
    println!(
        "trained {} epochs in {:.1}s, final loss {:.6}",
        report.epoch_loss.len(),
        report.wall_time_secs,
        report.final_loss
    );
    match loss_curve_monotone_check(&report) {
        LossCurveCheck::Pass => println!("loss curve: ok"),
        LossCurveCheck::TooShort { epochs } => {
            println!("loss curve: skipped ({epochs} epochs < 10)")
        }
        LossCurveCheck::Flagged {
            window_start,
            window_mean,
            best_mean,
        } => println!(
            "loss curve: FLAGGED — window at epoch {window_start} means {window_mean:.4} \
             vs best {best_mean:.4} (advisory)"
        ),
    }
    Ok(())
}

fn print_sweep_summary(result: &SweepResult) {
    println!("{:>8}  {:>12}  {:>12}", "Eb/N0", "avg BLER", "ci95");
    for a in &result.averages {
        println!("{:>8.2}  {:>12.6e}  {:>12.6e}", a.ebn0_db, a.bler, a.ci95);
    }
    let unreliable: Vec<String> = result
        .cells
        .iter()
        .filter(|c| !c.reliable())
        .map(|c| format!("({}, {} dB)", c.state, c.ebn0_db))
        .collect();
    if !unreliable.is_empty() {
        println!(
            "note: {} cell(s) with < 10 errors are statistically unreliable: {}",
            unreliable.len(),
            unreliable.join(", ")
        );
    }
}

fn cmd_sweep(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    trials: Option<u64>,
    workers: Option<usize>,
    sets: &[String],
) -> Result<()> {
    let mut run_config = load_run_config(config_path, sets)?;
    if run_config.mode != Mode::Sweep && run_config.mode != Mode::Eval {
        return Err(Error::Config(format!(
            "config mode is {:?}, expected sweep or eval",
            run_config.mode
        )));
    }
    if let Some(s) = seed {
        run_config.seed = s;
    }
    if let Some(dir) = out {
        run_config.out_dir = dir;
    }
    let model_path = run_config.model_path.clone().ok_or_else(|| {
        Error::Config("sweep needs model_path in the config (or --set model_path=...)".into())
    })?;

    println!("# resolved configuration\n{}", run_config.echo());
    let mut eval_cfg = run_config
        .eval
        .as_ref()
        .expect("normalized")
        .to_eval_config(run_config.seed);
    if let Some(t) = trials {
        eval_cfg.trials_per_cell = t;
    }
    if let Some(w) = workers {
        eval_cfg.worker_count = w;
    }
    eval_cfg.worker_count = cap_workers(eval_cfg.worker_count);

    let artifact = load_model(&model_path)?;
    let result = sweep(&artifact.model, &eval_cfg)?;

    let csv_path = run_config.out_dir.join("results.csv");
    let json_path = run_config.out_dir.join("results.json");
    write_sweep(&result, &csv_path, &json_path)?;
    println!("results {}", csv_path.display());
    println!("        {}", json_path.display());
    print_sweep_summary(&result);
    Ok(())
}

fn cmd_export_codebook(model_path: &Path, out: Option<&Path>) -> Result<()> {
    let artifact = load_model(model_path)?;
    let codebook = artifact.model.extract_codebook()?;
    match out {
        Some(path) => {
            write_codebook(&codebook, path)?;
            println!("codebook {}", path.display());
        }
        None => print!("{}", rateless_ae::io::codebook_csv(&codebook)),
    }
    Ok(())
}

fn cmd_inspect(file: &Path) -> Result<()> {
    let bytes = std::fs::read(file)
        .map_err(|e| Error::ModelFile(format!("cannot read {}: {e}", file.display())))?;
    if bytes.starts_with(b"RAEMODEL") {
        print!("{}", describe_model(file)?);
        return Ok(());
    }
    // Results JSON: surface the embedded metadata.
    let doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(|_| {
        Error::ModelFile(format!(
            "{} is neither a model file nor JSON",
            file.display()
        ))
    })?;
    let meta = doc
        .get("meta")
        .ok_or_else(|| Error::ModelFile("results JSON carries no meta object".into()))?;
    println!("results file      {}", file.display());
    println!(
        "{}",
        serde_json::to_string_pretty(meta).expect("meta serializes")
    );
    if let Some(fp) = doc.get("fingerprint") {
        println!("fingerprint       {fp}");
    }
    Ok(())
}

fn apply_preset_overrides(preset: &mut Preset, sets: &[String]) -> Result<()> {
    if let Some(bad) = sets
        .iter()
        .find(|s| !s.starts_with("train.") && !s.starts_with("eval."))
    {
        return Err(Error::Config(format!(
            "reproduce overrides must start with train. or eval. (got '{bad}')"
        )));
    }
    let train_sets: Vec<String> = sets
        .iter()
        .filter(|s| s.starts_with("train."))
        .cloned()
        .collect();
    let eval_sets: Vec<String> = sets
        .iter()
        .filter(|s| s.starts_with("eval."))
        .cloned()
        .collect();

    for job in &mut preset.trains {
        let section = toml::Value::try_from(&job.section)
            .map_err(|e| Error::Config(format!("internal preset serialization: {e}")))?;
        let mut root = toml::Table::new();
        root.insert("train".into(), section);
        let mut value = toml::Value::Table(root);
        config::apply_overrides(&mut value, &train_sets)?;
        job.section = value.as_table().expect("built above")["train"]
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("invalid train override: {e}")))?;
    }
    for job in &mut preset.sweeps {
        let section = toml::Value::try_from(&job.eval)
            .map_err(|e| Error::Config(format!("internal preset serialization: {e}")))?;
        let mut root = toml::Table::new();
        root.insert("eval".into(), section);
        let mut value = toml::Value::Table(root);
        config::apply_overrides(&mut value, &eval_sets)?;
        job.eval = value.as_table().expect("built above")["eval"]
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("invalid eval override: {e}")))?;
    }
    Ok(())
}

fn cmd_reproduce(
    figure: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
    trials: Option<u64>,
    workers: Option<usize>,
    sets: &[String],
) -> Result<()> {
    let figure: Figure = figure.parse()?;
    let mut preset = config::preset(figure);
    apply_preset_overrides(&mut preset, sets)?;
    let seed = seed.unwrap_or(1);
    let out_dir =
        out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{figure:?}").to_lowercase()));

    println!("reproducing {figure:?}: {}", preset.description);
    println!("output under {}\n", out_dir.display());

    // Train (or reuse) every model the figure needs.
    let mut models: Vec<(String, ModelArtifact)> = Vec::new();
    for job in &preset.trains {
        let cfg = job.section.to_train_config(seed);
        cfg.validate()?;
        let hash8 = &train_config_hash(&cfg)[..8];
        let path = out_dir
            .join("models")
            .join(format!("{}-{hash8}.raem", job.name));
        let artifact = match load_model(&path) {
            Ok(artifact) if artifact.config_hash() == train_config_hash(&cfg) => {
                println!("[{}] cached model {}", job.name, path.display());
                artifact
            }
            _ => {
                println!("[{}] training ({} epochs)...", job.name, cfg.epochs);
                let (model, report) = train(&cfg).map_err(Error::from)?;
                let artifact = ModelArtifact::new(model, cfg, &report);
                save_model(&artifact, &path)?;
                write_train_report(&report, &path.with_extension("report.json"))?;
                println!(
                    "[{}] done in {:.1}s, final loss {:.4}",
                    job.name, report.wall_time_secs, report.final_loss
                );
                artifact
            }
        };
        models.push((job.name.clone(), artifact));
    }

    // Run every sweep against its model.
    for job in &preset.sweeps {
        let artifact = &models
            .iter()
            .find(|(n, _)| n == &job.model)
            .expect("preset model names are closed")
            .1;
        let mut eval_cfg = job.eval.to_eval_config(seed);
        if let Some(t) = trials {
            eval_cfg.trials_per_cell = t;
        }
        if let Some(w) = workers {
            eval_cfg.worker_count = w;
        }
        eval_cfg.worker_count = cap_workers(eval_cfg.worker_count);

        println!(
            "\n[{}] sweeping {} cells...",
            job.name,
            eval_cfg.ebn0_grid_db.len() * eval_cfg.channel.state_count()
        );
        let result = sweep(&artifact.model, &eval_cfg)?;
        let csv = out_dir.join(format!("{}.csv", job.name));
        let json = out_dir.join(format!("{}.json", job.name));
        write_sweep(&result, &csv, &json)?;
        println!("[{}] results {}", job.name, csv.display());
        print_sweep_summary(&result);
    }

    describe_channel(&preset);
    Ok(())
}

fn describe_channel(preset: &Preset) {
    if let Some(first) = preset.sweeps.first() {
        match &first.eval.channel {
            ErasureModel::Tail { r, .. } => {
                println!("\nchannel: tail erasures over prefixes {r:?}")
            }
            ErasureModel::Random { eps, .. } => {
                println!("\nchannel: random erasures with rates {eps:?}")
            }
        }
    }
}
