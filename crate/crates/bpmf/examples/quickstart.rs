//! Smallest end-to-end run: plant a low-rank matrix, sample, watch the
//! held-out RMSE fall.
//!
//!     cargo run --release --example quickstart

use bpmf::fixture::planted_instance;
use bpmf::partition::build_plan;
use bpmf::ratings::{split_train_test, RatingsSplit};
use bpmf::sampler::{run, NwPrior, RunControl, SamplerConfig};
use bpmf::schedule::CostModel;
use bpmf::transport::Transport;
use bpmf::{CounterRng, Stream};

fn main() {
    // 300 users × 200 movies, true rank 4, 20% observed, noise σ = 0.1
    let planted = planted_instance(300, 200, 4, 0.2, 0.1, 7);
    println!(
        "planted instance: {} users × {} movies, {} ratings",
        planted.ratings.num_users(),
        planted.ratings.num_movies(),
        planted.ratings.nnz()
    );

    let mut rng = CounterRng::new(7, 0, Stream::SplitShuffle, 0);
    let split = split_train_test(&planted.ratings, 0.2, &mut rng).unwrap();

    // single node: identity-equivalent plan, but the locality reorder still runs
    let (plan, train) = build_plan(&split.train, &CostModel::default(), 1).unwrap();
    let test = split
        .test
        .iter()
        .map(|&(u, m, r)| (plan.row_perm[u as usize], plan.col_perm[m as usize], r))
        .collect();
    let split = RatingsSplit { train, test };

    let cfg = SamplerConfig {
        alpha: 100.0, // match the generator's noise precision 1/σ²
        workers: 2,
        ..SamplerConfig::new(8, 30, 10, 7)
    };
    let prior = NwPrior::uninformative(cfg.k);
    let tx = Transport::single();

    let result = run(&cfg, &prior, &split, &plan, &tx, &RunControl::default(), &mut |stats| {
        println!(
            "iteration {:>2}: test rmse {:.4} (avg {:.4}), train rmse {:.4}, {:>8.0} updates/s",
            stats.iteration,
            stats.rmse_sample,
            stats.rmse_avg,
            stats.rmse_train,
            stats.updates_per_sec
        );
    })
    .unwrap();

    let last = result.trace.last().unwrap();
    println!(
        "\nfinal averaged RMSE {:.4} over {} held-out ratings (noise floor σ = 0.1)",
        last.rmse_avg,
        result.owned_test.len()
    );
}
