//! Smoke-scale pipeline test: train, persist, reload, sweep, compare.

use rateless_ae::channel::{ChannelState, ErasureModel};
use rateless_ae::codec::PowerConstraint;
use rateless_ae::evaluator::{compare, sweep, Dominance, EvalConfig};
use rateless_ae::io::{load_model, model_from_bytes, model_to_bytes, save_model, ModelArtifact};
use rateless_ae::nn::AdamHyper;
use rateless_ae::trainer::{train, DropoutSpec, TrainConfig};

fn smoke_tail_config(dropout: DropoutSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        message_count: 16,
        codeword_len: 8,
        hidden: vec![32],
        batch_size: 50,
        epochs: 40,
        train_set_size: 2000,
        ebn0_train_db: 1.0,
        power_constraint: PowerConstraint::Average,
        dropout,
        adam: AdamHyper::default(),
        seed,
    }
}

#[test]
fn full_pipeline_round_trip_and_dominance() {
    let dir = tempfile::tempdir().unwrap();

    // Conventional baseline and a rateless code trained toward short
    // prefixes.
    let cae_cfg = smoke_tail_config(DropoutSpec::None, 61);
    let rae_cfg = smoke_tail_config(
        DropoutSpec::Tail {
            q: vec![0.25, 0.25, 0.25, 0.25],
            r: vec![2, 4, 6, 8],
        },
        61,
    );
    let (cae, cae_report) = train(&cae_cfg).unwrap();
    let (rae, rae_report) = train(&rae_cfg).unwrap();

    // Persist and reload both; files round-trip bit-exactly.
    let cae_path = dir.path().join("cae.raem");
    let rae_path = dir.path().join("rae.raem");
    let cae_artifact = ModelArtifact::new(cae, cae_cfg, &cae_report);
    let rae_artifact = ModelArtifact::new(rae, rae_cfg, &rae_report);
    save_model(&cae_artifact, &cae_path).unwrap();
    save_model(&rae_artifact, &rae_path).unwrap();
    let cae_loaded = load_model(&cae_path).unwrap();
    let rae_loaded = load_model(&rae_path).unwrap();
    assert_eq!(cae_artifact, cae_loaded);
    let reserialized = model_to_bytes(&model_from_bytes(&model_to_bytes(&rae_artifact)).unwrap());
    assert_eq!(reserialized, model_to_bytes(&rae_artifact));

    // Sweep both over the same grid with the same seed.
    let eval = EvalConfig {
        channel: ErasureModel::Tail {
            p: vec![0.25, 0.25, 0.25, 0.25],
            r: vec![2, 4, 6, 8],
        },
        ebn0_grid_db: vec![4.0],
        trials_per_cell: 20_000,
        min_errors: u64::MAX,
        seed: 62,
        worker_count: 1,
    };
    let cae_sweep = sweep(&cae_loaded.model, &eval).unwrap();
    let rae_sweep = sweep(&rae_loaded.model, &eval).unwrap();

    // The rateless model must dominate the baseline at the shortest
    // prefix, where the conventional code collapses.
    let report = compare(&cae_sweep, &rae_sweep).unwrap();
    let shortest = report
        .cells
        .iter()
        .find(|c| c.state == ChannelState::Tail { r: 2 })
        .unwrap();
    assert_eq!(
        shortest.verdict,
        Dominance::CandidateLower,
        "rateless {} vs conventional {} at r=2",
        shortest.candidate_bler,
        shortest.baseline_bler
    );
    let ratio = shortest.ratio.unwrap();
    assert!(ratio < 0.8, "expected a clear gap, got ratio {ratio}");

    // The weighted average must also favor the rateless design here.
    assert!(rae_sweep.averages[0].bler < cae_sweep.averages[0].bler);
}
