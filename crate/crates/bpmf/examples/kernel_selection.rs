//! The per-item kernel choice and the cost model behind load balancing.
//!
//! Items with few ratings use an O(nnz·K²) rank-one update of the precision
//! factor; heavier items amortize a full factorization; the heaviest split
//! their accumulation across sub-workers. `calibrate` times all three on
//! this machine and fits the workload model.
//!
//!     cargo run --release --example kernel_selection

use bpmf::schedule::{
    build_task_groups, calibrate, estimate_cost, select_method, CostModel,
};

fn main() {
    let model = CostModel::default();
    println!("default cost model: {model:?}\n");

    println!("kernel selection by rating count:");
    for nnz in [0usize, 10, 999, 1000, 5000, 10_000, 1_000_000] {
        println!(
            "  nnz {:>8} → {:?} (modeled cost {:.0})",
            nnz,
            select_method(nnz, &model),
            estimate_cost(nnz, &model)
        );
    }

    // deterministic longest-processing-time grouping
    let costs = vec![50.0, 3.0, 7.0, 2.0, 41.0, 5.0, 6.0, 4.0];
    let groups = build_task_groups(&costs, 3);
    println!("\nLPT groups for costs {costs:?} on 3 workers:");
    for (w, group) in groups.iter().enumerate() {
        let load: f64 = group.iter().map(|&i| costs[i]).sum();
        println!("  worker {w}: items {group:?}, load {load}");
    }

    // measure the real curves at K = 16 and fit (fixed, per-rating) costs
    println!("\ncalibrating at K = 16 (takes a few seconds)...");
    let report = calibrate(16);
    print!("{}", report.to_text());
}
