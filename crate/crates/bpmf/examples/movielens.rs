//! Factorize MovieLens 100k and compare against the mean-rating baselines.
//!
//!     cargo run --release --example movielens [path/to/ml-100k.mtx]
//!
//! Defaults to the bundled data/ml-100k.mtx (943 users, 1682 movies,
//! 100k ratings in MatrixMarket form).

use bpmf::partition::build_plan;
use bpmf::ratings::{load_matrix_market, split_train_test, RatingsSplit};
use bpmf::sampler::{run, NwPrior, RunControl, SamplerConfig};
use bpmf::schedule::CostModel;
use bpmf::transport::Transport;
use bpmf::{CounterRng, Stream};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ml-100k.mtx").to_string()
    });
    let ratings = load_matrix_market(std::path::Path::new(&path))
        .unwrap_or_else(|e| panic!("cannot load {path}: {e}"));
    println!(
        "{path}: {} users × {} movies, {} ratings, global mean {:.3}",
        ratings.num_users(),
        ratings.num_movies(),
        ratings.nnz(),
        ratings.global_mean()
    );

    let mut rng = CounterRng::new(42, 0, Stream::SplitShuffle, 0);
    let split = split_train_test(&ratings, 0.2, &mut rng).unwrap();
    let (plan, train) = build_plan(&split.train, &CostModel::default(), 1).unwrap();
    let test: Vec<_> = split
        .test
        .iter()
        .map(|&(u, m, r)| (plan.row_perm[u as usize], plan.col_perm[m as usize], r))
        .collect();

    // baselines on the same split
    let global_mean = train.global_mean();
    let mut movie_sum = vec![0.0f64; train.num_movies()];
    let mut movie_cnt = vec![0usize; train.num_movies()];
    for (_, m, r) in train.triples() {
        movie_sum[m as usize] += r;
        movie_cnt[m as usize] += 1;
    }
    let (mut sq_g, mut sq_m) = (0.0, 0.0);
    for &(_, m, r) in &test {
        let m = m as usize;
        sq_g += (global_mean - r) * (global_mean - r);
        let item = if movie_cnt[m] > 0 { movie_sum[m] / movie_cnt[m] as f64 } else { global_mean };
        sq_m += (item - r) * (item - r);
    }
    let n = test.len() as f64;
    println!("baseline RMSE: global mean {:.4}, per-movie mean {:.4}", (sq_g / n).sqrt(), (sq_m / n).sqrt());

    let split = RatingsSplit { train, test };
    let cfg = SamplerConfig { workers: 2, ..SamplerConfig::new(10, 50, 10, 42) };
    let prior = NwPrior::uninformative(cfg.k);
    let tx = Transport::single();
    let started = std::time::Instant::now();
    let result = run(&cfg, &prior, &split, &plan, &tx, &RunControl::default(), &mut |s| {
        if s.iteration % 10 == 0 {
            println!(
                "  iteration {:>3}: sample RMSE {:.4}, averaged RMSE {:.4}",
                s.iteration, s.rmse_sample, s.rmse_avg
            );
        }
    })
    .unwrap();

    let last = result.trace.last().unwrap();
    println!(
        "\nK = {}, {} iterations in {:.1}s: averaged test RMSE {:.4}",
        cfg.k,
        cfg.iterations,
        started.elapsed().as_secs_f64(),
        last.rmse_avg
    );
}
