//! End-to-end CLI tests driving the `rae` binary at smoke scale.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rae() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rae"))
}

fn write_config(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

const SMOKE_TRAIN: &str = r#"
mode = "train"
seed = 11

[train]
message_count = 16
codeword_len = 8
hidden = [32]
batch_size = 50
epochs = 12
train_set_size = 1000
ebn0_train_db = 2.0

[train.dropout]
kind = "tail"
q = [0.5, 0.3, 0.1, 0.1]
r = [2, 4, 6, 8]
"#;

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn train_sweep_export_inspect_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", SMOKE_TRAIN);
    let out_dir = dir.path().join("run");

    let out = run(rae()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // Resolved defaults echoed back.
    assert!(text.contains("alpha = 0.001"), "{text}");
    assert!(text.contains("batch_size = 50"), "{text}");
    let model = out_dir.join("model.raem");
    assert!(model.exists());
    assert!(out_dir.join("model.report.json").exists());

    // Inspect reports the architecture and hashes.
    let out = run(rae().arg("inspect").arg(&model));
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("H = 1"), "{text}");
    assert!(text.contains("config hash"), "{text}");

    // Sweep the trained model over its channel.
    let sweep_cfg = write_config(
        dir.path(),
        "sweep.toml",
        &format!(
            r#"
mode = "sweep"
seed = 12
model_path = "{}"

[eval]
ebn0_grid_db = [2.0, 4.0]
trials_per_cell = 2000
min_errors = 1000000

[eval.channel]
model = "tail"
p = [0.5, 0.3, 0.1, 0.1]
r = [2, 4, 6, 8]
"#,
            model.display()
        ),
    );
    let sweep_out = dir.path().join("sweep-out");
    let out = run(rae()
        .arg("sweep")
        .arg("--config")
        .arg(&sweep_cfg)
        .arg("--out")
        .arg(&sweep_out)
        .arg("--workers")
        .arg("2"));
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(sweep_out.join("results.csv")).unwrap();
    assert!(csv.starts_with(
        "model_id,constraint,channel_model,state_param,ebn0_db,trials,errors,bler,ci95"
    ));
    // 8 cells + 2 average rows + header.
    assert_eq!(csv.lines().count(), 1 + 8 + 2, "{csv}");
    assert!(csv.contains(",avg,"));
    let json = std::fs::read_to_string(sweep_out.join("results.json")).unwrap();
    assert!(json.contains("\"fingerprint\""));

    // Inspect the results JSON too.
    let out = run(rae().arg("inspect").arg(sweep_out.join("results.json")));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("model_hash"));

    // Codebook export to a file: header + 16 rows.
    let cb_path = dir.path().join("codebook.csv");
    let out = run(rae()
        .arg("export-codebook")
        .arg(&model)
        .arg("--out")
        .arg(&cb_path));
    assert!(out.status.success(), "{}", stderr(&out));
    let cb = std::fs::read_to_string(&cb_path).unwrap();
    assert!(cb.starts_with("m,x1,x2,x3,x4,x5,x6,x7,x8"));
    assert_eq!(cb.lines().count(), 17);
}

#[test]
fn identical_config_and_seed_give_byte_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", SMOKE_TRAIN);
    for sub in ["a", "b"] {
        let out = run(rae()
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(sub)));
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a/model.raem")).unwrap();
    let b = std::fs::read(dir.path().join("b/model.raem")).unwrap();
    assert_eq!(a, b);

    // A different seed gives a different model file.
    let out = run(rae()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--seed")
        .arg("999")
        .arg("--out")
        .arg(dir.path().join("c")));
    assert!(out.status.success());
    let c = std::fs::read(dir.path().join("c/model.raem")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn dropout_none_flag_trains_conventional_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", SMOKE_TRAIN);
    let out = run(rae()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--dropout")
        .arg("none")
        .arg("--out")
        .arg(dir.path().join("cae")));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("kind = \"none\""));
}

#[test]
fn invalid_config_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.toml",
        "mode = \"train\"\n[train]\nepochz = 3\n",
    );
    let out = run(rae().arg("train").arg("--config").arg(&config));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));
}

#[test]
fn missing_model_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sweep.toml",
        "mode = \"sweep\"\nmodel_path = \"no/such/model.raem\"\n",
    );
    let out = run(rae().arg("sweep").arg("--config").arg(&config));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numeric_abort_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", SMOKE_TRAIN);
    let out = run(rae()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--set")
        .arg("train.adam.alpha=1e300")
        .arg("--out")
        .arg(dir.path().join("blow")));
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn corrupt_model_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", SMOKE_TRAIN);
    let out_dir = dir.path().join("run");
    let out = run(rae()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert!(out.status.success());
    let model = out_dir.join("model.raem");
    let mut bytes = std::fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&model, bytes).unwrap();
    let out = run(rae().arg("inspect").arg(&model));
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn reproduce_runs_presets_at_toy_scale_with_caching() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("fig4");
    let scale_args = [
        "--set",
        "train.message_count=16",
        "--set",
        "train.codeword_len=8",
        "--set",
        "train.hidden=[32]",
        "--set",
        "train.batch_size=50",
        "--set",
        "train.epochs=2",
        "--set",
        "train.train_set_size=500",
        "--set",
        "train.dropout.r=[2,4,6,8]",
        "--set",
        "eval.channel.r=[2,4,6,8]",
        "--set",
        "eval.ebn0_grid_db=[3.0]",
        "--set",
        "eval.trials_per_cell=500",
    ];
    let out = run(rae()
        .arg("reproduce")
        .arg("fig4")
        .arg("--out")
        .arg(&out_dir)
        .arg("--workers")
        .arg("2")
        .args(scale_args));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("training"), "{text}");
    for name in [
        "cae-avg-p1",
        "rae-p1-avg",
        "cae-avg-p2",
        "rae-p2-avg",
        "cae-avg-p3",
        "rae-p3-avg",
    ] {
        assert!(out_dir.join(format!("{name}.csv")).exists(), "{name}");
        assert!(out_dir.join(format!("{name}.json")).exists(), "{name}");
    }

    // A second run reuses the cached models.
    let out = run(rae()
        .arg("reproduce")
        .arg("fig4")
        .arg("--out")
        .arg(&out_dir)
        .arg("--workers")
        .arg("2")
        .args(scale_args));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("cached model"), "{}", stdout(&out));

    let out = run(rae().arg("reproduce").arg("fig9"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rae_threads_caps_worker_count() {
    // Capping workers must not change results (per-cell seeding).
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", SMOKE_TRAIN);
    let out_dir = dir.path().join("run");
    let out = run(rae()
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert!(out.status.success());

    let sweep_cfg = write_config(
        dir.path(),
        "sweep.toml",
        &format!(
            r#"
mode = "sweep"
model_path = "{}"

[eval]
ebn0_grid_db = [3.0]
trials_per_cell = 1000
min_errors = 1000000
worker_count = 8

[eval.channel]
model = "tail"
p = [0.5, 0.5]
r = [4, 8]
"#,
            out_dir.join("model.raem").display()
        ),
    );
    let capped = dir.path().join("capped");
    let out = run(rae()
        .arg("sweep")
        .arg("--config")
        .arg(&sweep_cfg)
        .arg("--out")
        .arg(&capped)
        .env("RAE_THREADS", "1"));
    assert!(out.status.success(), "{}", stderr(&out));
    let uncapped = dir.path().join("uncapped");
    let out = run(rae()
        .arg("sweep")
        .arg("--config")
        .arg(&sweep_cfg)
        .arg("--out")
        .arg(&uncapped));
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        std::fs::read_to_string(capped.join("results.csv")).unwrap(),
        std::fs::read_to_string(uncapped.join("results.csv")).unwrap()
    );
}
