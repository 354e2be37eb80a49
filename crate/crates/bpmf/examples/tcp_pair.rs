//! Two nodes exchanging over real TCP sockets on localhost. The same
//! binary-framed protocol drives separate processes; here both endpoints
//! live in one process for a self-contained demo.
//!
//!     cargo run --release --example tcp_pair
//!
//! For a true two-process run, use the CLI:
//!     bpmf --train fixture:100x80 --nodes 2 --backend tcp --node-id 0 \
//!          --peers 127.0.0.1:7401,127.0.0.1:7402 --out run-a   # terminal 1
//!     bpmf --train fixture:100x80 --nodes 2 --backend tcp --node-id 1 \
//!          --peers 127.0.0.1:7401,127.0.0.1:7402 --out run-b   # terminal 2

use std::net::TcpListener;
use std::time::Duration;

use bpmf::fixture::fixture_100x80;
use bpmf::partition::{build_comm_plan, build_plan, union_destinations};
use bpmf::ratings::{split_train_test, RatingsSplit, SparseRatings};
use bpmf::sampler::{run, NwPrior, RunControl, SamplerConfig};
use bpmf::schedule::CostModel;
use bpmf::transport::{tcp_connect, SendPolicy, TcpConfig};
use bpmf::{CounterRng, Stream};

fn main() {
    // grab two free ports, release them for the real binds
    let endpoints: Vec<String> = (0..2)
        .map(|_| {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            format!("127.0.0.1:{}", l.local_addr().unwrap().port())
        })
        .collect();
    println!("endpoints: {endpoints:?}");

    let ratings = fixture_100x80();
    let mut rng = CounterRng::new(42, 0, Stream::SplitShuffle, 0);
    let split = split_train_test(&ratings, 0.2, &mut rng).unwrap();
    let (mut plan, train) = build_plan(&split.train, &CostModel::default(), 2).unwrap();
    let test: Vec<_> = split
        .test
        .iter()
        .map(|&(u, m, r)| (plan.row_perm[u as usize], plan.col_perm[m as usize], r))
        .collect();
    let test_matrix =
        SparseRatings::from_triples(train.num_users(), train.num_movies(), test.clone()).unwrap();
    let extra = build_comm_plan(&test_matrix, &plan.ranges_users, &plan.ranges_movies);
    union_destinations(&mut plan.comm.dest_movies, &extra.dest_movies);
    let split = RatingsSplit { train, test };

    let cfg = SamplerConfig { workers: 1, ..SamplerConfig::new(8, 12, 4, 42) };
    let prior = NwPrior::uninformative(cfg.k);

    let results = std::thread::scope(|s| {
        let handles: Vec<_> = (0..2)
            .map(|node_id| {
                let endpoints = endpoints.clone();
                let (cfg, prior, split, plan) = (&cfg, &prior, &split, &plan);
                s.spawn(move || {
                    let tx = tcp_connect(&TcpConfig {
                        node_id,
                        endpoints,
                        policy: SendPolicy::Buffered(32),
                        phase_timeout: Duration::from_secs(30),
                        connect_timeout: Duration::from_secs(30),
                        k: cfg.k,
                        run_digest: 0xfeed,
                    })
                    .expect("connect mesh");
                    let result = run(cfg, prior, split, plan, &tx, &RunControl::default(), &mut |_| {})
                        .expect("node run");
                    let stats = tx.collect_stats();
                    (result, stats)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
    });

    for (result, stats) in &results {
        let last = result.trace.last().unwrap();
        println!(
            "node {}: final averaged RMSE {:.6}; {} bytes in {} wire writes",
            result.node_id, last.rmse_avg, stats.bytes_sent, stats.wire_writes
        );
    }
    let t0: Vec<u64> = results[0].0.trace.iter().map(|s| s.rmse_avg.to_bits()).collect();
    let t1: Vec<u64> = results[1].0.trace.iter().map(|s| s.rmse_avg.to_bits()).collect();
    assert_eq!(t0, t1);
    println!("both nodes observed the identical global RMSE trace");
}
