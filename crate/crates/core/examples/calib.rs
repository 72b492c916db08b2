//! Scratch calibration runs (not part of the test suite).
//!
//! Usage: calib <epochs> [set] [batch] [ebn0] [dropout: none|tail-p1|tail-p2|tail-p3|rand-p1] [seed] [fixed]

use rateless_ae::channel::ChannelState;
use rateless_ae::codec::PowerConstraint;
use rateless_ae::evaluator::{bler_cell, cell_label};
use rateless_ae::nn::AdamHyper;
use rateless_ae::rng::RngFactory;
use rateless_ae::trainer::{train, DropoutSpec, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let set: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(500);
    let ebn0: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let dropout = match args.get(5).map(|s| s.as_str()).unwrap_or("none") {
        "tail-p1" => DropoutSpec::Tail {
            q: vec![0.8, 0.1, 0.05, 0.05],
            r: vec![15, 18, 21, 24],
        },
        "tail-p2" => DropoutSpec::Tail {
            q: vec![0.25; 4],
            r: vec![15, 18, 21, 24],
        },
        "tail-p3" => DropoutSpec::Tail {
            q: vec![0.05, 0.05, 0.1, 0.8],
            r: vec![15, 18, 21, 24],
        },
        "rand-p1" => DropoutSpec::Random {
            q: vec![0.8, 0.1, 0.05, 0.05],
            eps: vec![0.375, 0.25, 0.125, 0.0],
        },
        _ => DropoutSpec::None,
    };
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(101);
    let constraint = if args.get(7).map(|s| s.as_str()) == Some("fixed") {
        PowerConstraint::Fixed
    } else {
        PowerConstraint::Average
    };

    let cfg = TrainConfig {
        message_count: 4096,
        codeword_len: 24,
        hidden: vec![500],
        batch_size: batch,
        epochs,
        train_set_size: set,
        ebn0_train_db: ebn0,
        power_constraint: constraint,
        dropout,
        adam: AdamHyper::default(),
        seed,
    };
    let t0 = std::time::Instant::now();
    let (model, report) = train(&cfg).unwrap();
    let steps = epochs * (set / batch);
    println!(
        "train: {} steps in {:.1}s ({:.3} s/step), final_loss={:.4}",
        steps,
        report.wall_time_secs,
        report.wall_time_secs / steps as f64,
        report.final_loss
    );
    for (i, l) in report.epoch_loss.iter().enumerate() {
        println!("  epoch {i:3}: {l:.4}");
    }

    // Quick BLER probes.
    let f = RngFactory::new(9000);
    let te = t0.elapsed();
    for (r, ebn0_db, trials) in [
        (24usize, 5.0, 30_000u64),
        (24, 7.0, 30_000),
        (21, 5.0, 30_000),
        (18, 5.0, 30_000),
        (15, 5.0, 30_000),
    ] {
        let state = ChannelState::Tail { r };
        let est = bler_cell(
            &model,
            &state,
            ebn0_db,
            trials,
            100,
            &f,
            &cell_label(&state, ebn0_db),
        )
        .unwrap();
        println!(
            "  bler r={r:2} @{ebn0_db} dB: {:.4e} ({} errs / {} trials)",
            est.bler(),
            est.errors,
            est.trials
        );
    }
    println!(
        "eval took {:.1}s",
        (t0.elapsed() - te).as_secs_f64()
    );
}
