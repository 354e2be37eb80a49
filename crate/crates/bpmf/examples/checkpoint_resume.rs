//! Checkpointing: stop a run halfway, resume it, and end in exactly the
//! state an uninterrupted run reaches — bit for bit.
//!
//!     cargo run --example checkpoint_resume

use bpmf::engine::{execute, RunConfig};

fn main() {
    let base_dir = std::env::temp_dir().join("bpmf-checkpoint-demo");
    let _ = std::fs::remove_dir_all(&base_dir);

    let base = RunConfig {
        train: "fixture:100x80".into(),
        k: 6,
        iterations: 10,
        burnin: 3,
        seed: 2024,
        workers: 2,
        checkpoint_every: 2,
        ..Default::default()
    };

    // the uninterrupted reference
    let straight = RunConfig { out: base_dir.join("straight"), ..base.clone() };
    let report = execute(&straight, None).unwrap();
    println!(
        "straight run:  10 iterations, final averaged RMSE {:.6}",
        report.final_rmse_avg()
    );

    // a run that stops after 5 iterations...
    let first = RunConfig {
        iterations: 5,
        out: base_dir.join("first-half"),
        ..base.clone()
    };
    execute(&first, None).unwrap();
    println!("first half:    stopped after 5 iterations, checkpoint written");

    // ...and a resumed run that finishes the remaining 5
    let resumed = RunConfig {
        out: base_dir.join("resumed"),
        resume: Some(base_dir.join("first-half")),
        ..base.clone()
    };
    let report = execute(&resumed, None).unwrap();
    println!(
        "resumed run:   5 more iterations, final averaged RMSE {:.6}",
        report.final_rmse_avg()
    );

    let a = std::fs::read(base_dir.join("straight/checkpoint_node0.bin")).unwrap();
    let b = std::fs::read(base_dir.join("resumed/checkpoint_node0.bin")).unwrap();
    assert_eq!(a, b);
    println!(
        "\nfinal checkpoints ({} bytes) are byte-identical: factors, hyperparameters \
         and running averages all match",
        a.len()
    );
    println!("outputs under {}", base_dir.display());
}
