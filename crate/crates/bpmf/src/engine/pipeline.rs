//! Load → split → plan → run across local workers and nodes → report.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use crate::fixture;
use crate::partition::{build_comm_plan, build_plan, union_destinations, write_plan, PartitionPlan};
use crate::ratings::{
    load_matrix_market, load_ratings_csv, split_train_test, CsvSchema, IdMaps, RatingsSplit,
    SparseRatings,
};
use crate::rng::{CounterRng, Stream};
use crate::sampler::{
    read_checkpoint, run, Checkpoint, NodeRunResult, NwPrior, RunControl, SamplerConfig,
};
use crate::schedule::CostModel;
use crate::transport::{self, InProcFabricBuilder, OverlapStats, Transport};

use super::config::{Backend, DataFormat, EngineError, RunConfig};
use super::metrics::{MetricsRecord, MetricsSink};

/// What a finished (or interrupted) run leaves behind.
pub struct EngineReport {
    pub out_dir: PathBuf,
    /// Results of the nodes that ran in this process, ascending node id.
    pub results: Vec<NodeRunResult>,
    pub plan: PartitionPlan,
    pub interrupted: bool,
}

impl EngineReport {
    /// Final averaged-prediction RMSE over the local nodes' test pairs.
    pub fn final_rmse_avg(&self) -> f64 {
        self.results
            .first()
            .and_then(|r| r.trace.last())
            .map(|s| s.rmse_avg)
            .unwrap_or(f64::NAN)
    }
}

/// Path of the bundled fixture recognized by `--train fixture:100x80`.
pub const FIXTURE_TRAIN: &str = "fixture:100x80";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io { path: path.display().to_string(), source }
}

/// Run the full pipeline for this process. `interrupt`, when set by a
/// signal handler, stops the sampler at the next iteration boundary after
/// writing a checkpoint.
pub fn execute(
    cfg: &RunConfig,
    interrupt: Option<Arc<AtomicBool>>,
) -> Result<EngineReport, EngineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;

    // load
    let (raw, id_maps): (SparseRatings, Option<IdMaps>) =
        if cfg.train.as_os_str() == FIXTURE_TRAIN {
            (fixture::fixture_100x80(), None)
        } else {
            match cfg.format {
                DataFormat::MatrixMarket => (load_matrix_market(&cfg.train)?, None),
                DataFormat::Csv => {
                    let schema = CsvSchema {
                        delimiter: cfg.csv_delimiter,
                        has_header: cfg.csv_has_header,
                        ..CsvSchema::default()
                    };
                    let (r, maps) = load_ratings_csv(&cfg.train, &schema)?;
                    maps.save_sidecars(&cfg.out.join("ids"))?;
                    (r, Some(maps))
                }
            }
        };

    // split on original indices, deterministically from the seed
    let mut split_rng = CounterRng::new(cfg.seed, 0, Stream::SplitShuffle, 0);
    let split = split_train_test(&raw, cfg.test_fraction, &mut split_rng)?;

    // reorder + balance + communication plan, on the training pattern
    let (mut plan, train_permuted) = build_plan(&split.train, &CostModel::default(), cfg.nodes)?;
    let test_permuted: Vec<(u32, u32, f64)> = split
        .test
        .iter()
        .map(|&(u, m, r)| (plan.row_perm[u as usize], plan.col_perm[m as usize], r))
        .collect();

    // test pairs need the movie vector at the user's owner: merge those
    // destinations into the plan before anyone runs
    if cfg.nodes > 1 {
        let test_matrix = SparseRatings::from_triples(
            train_permuted.num_users(),
            train_permuted.num_movies(),
            test_permuted.clone(),
        )?;
        let test_comm =
            build_comm_plan(&test_matrix, &plan.ranges_users, &plan.ranges_movies);
        union_destinations(&mut plan.comm.dest_movies, &test_comm.dest_movies);
    }

    let split_permuted = RatingsSplit { train: train_permuted, test: test_permuted };

    write_plan(&plan, &cfg.out.join("plan.txt"))?;
    std::fs::write(cfg.out.join("config.txt"), cfg.to_text()).map_err(io_err(&cfg.out))?;

    let clamp = cfg.clamp.then(|| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, _, r) in raw.triples() {
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    });
    let scfg = SamplerConfig {
        k: cfg.k,
        alpha: cfg.alpha,
        iterations: cfg.iterations,
        burnin: cfg.burnin,
        seed: cfg.seed,
        center: cfg.center,
        clamp,
        workers: cfg.workers,
    };
    let prior = NwPrior::uninformative(cfg.k);

    // dispatch nodes
    let mut results: Vec<NodeRunResult> = Vec::new();
    if cfg.nodes == 1 {
        results.push(run_node(
            cfg,
            &scfg,
            &prior,
            &split_permuted,
            &plan,
            Transport::single(),
            interrupt.clone(),
        )?);
    } else {
        match cfg.backend {
            Backend::InProc => {
                let transports = InProcFabricBuilder::new(cfg.nodes)
                    .policy(cfg.policy)
                    .timeout(cfg.phase_timeout)
                    .build();
                let node_results: Vec<Result<NodeRunResult, EngineError>> =
                    std::thread::scope(|s| {
                        let handles: Vec<_> = transports
                            .into_iter()
                            .map(|tx| {
                                let scfg = &scfg;
                                let prior = &prior;
                                let split = &split_permuted;
                                let plan = &plan;
                                let interrupt = interrupt.clone();
                                s.spawn(move || {
                                    run_node(cfg, scfg, prior, split, plan, tx, interrupt)
                                })
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("node thread panicked"))
                            .collect()
                    });
                for r in node_results {
                    results.push(r?);
                }
            }
            Backend::Tcp => {
                let tcp_cfg = transport::TcpConfig {
                    node_id: cfg.node_id,
                    endpoints: cfg.peers.clone(),
                    policy: cfg.policy,
                    phase_timeout: cfg.phase_timeout,
                    connect_timeout: Duration::from_secs(30),
                    k: cfg.k,
                    run_digest: cfg.run_digest(),
                };
                let tx = transport::tcp_connect(&tcp_cfg)?;
                results.push(run_node(
                    cfg,
                    &scfg,
                    &prior,
                    &split_permuted,
                    &plan,
                    tx,
                    interrupt.clone(),
                )?);
            }
        }
    }

    let interrupted = results.iter().any(|r| r.interrupted);
    write_predictions(cfg, &plan, id_maps.as_ref(), &results)?;

    Ok(EngineReport { out_dir: cfg.out.clone(), results, plan, interrupted })
}

fn run_node(
    cfg: &RunConfig,
    scfg: &SamplerConfig,
    prior: &NwPrior,
    split: &RatingsSplit,
    plan: &PartitionPlan,
    tx: Transport,
    interrupt: Option<Arc<AtomicBool>>,
) -> Result<NodeRunResult, EngineError> {
    let node = tx.node_id();
    let metrics_path = if node == 0 {
        cfg.out.join("metrics.csv")
    } else {
        cfg.out.join(format!("metrics_node{node}.csv"))
    };
    let log_path = (node == 0).then(|| cfg.out.join("run.log"));
    let mut sink = MetricsSink::create(&metrics_path, log_path.as_deref())?;
    let mut prev = OverlapStats::default();
    let mut emit_err: Option<EngineError> = None;

    let control = RunControl {
        checkpoint_dir: Some(cfg.out.clone()),
        checkpoint_every: cfg.checkpoint_every,
        resume: resolve_resume(cfg, node)?,
        interrupt,
    };

    let result = run(scfg, prior, split, plan, &tx, &control, &mut |stats| {
        let record = MetricsRecord::from_stats(stats, &prev);
        prev = stats.transport.clone();
        if let Err(e) = sink.emit(&record) {
            emit_err.get_or_insert(e);
        }
    })?;
    match emit_err {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

fn resolve_resume(cfg: &RunConfig, node: usize) -> Result<Option<Checkpoint>, EngineError> {
    let Some(path) = &cfg.resume else { return Ok(None) };
    let file = if path.is_dir() {
        path.join(format!("checkpoint_node{node}.bin"))
    } else {
        path.clone()
    };
    Ok(Some(read_checkpoint(&file)?))
}

/// Final averaged predictions, mapped back to the dataset's own ids:
/// original 1-based indices for MatrixMarket input, external ids for CSV.
fn write_predictions(
    cfg: &RunConfig,
    plan: &PartitionPlan,
    id_maps: Option<&IdMaps>,
    results: &[NodeRunResult],
) -> Result<(), EngineError> {
    let mut row_inv = vec![0u32; plan.row_perm.len()];
    for (old, &new) in plan.row_perm.iter().enumerate() {
        row_inv[new as usize] = old as u32;
    }
    let mut col_inv = vec![0u32; plan.col_perm.len()];
    for (old, &new) in plan.col_perm.iter().enumerate() {
        col_inv[new as usize] = old as u32;
    }

    let mut rows: Vec<(u64, u64, f64)> = Vec::new();
    for result in results {
        for (&(u, m, _), &p) in result.owned_test.iter().zip(&result.averaged_predictions) {
            let orig_u = row_inv[u as usize] as u64;
            let orig_m = col_inv[m as usize] as u64;
            let (ext_u, ext_m) = match id_maps {
                Some(maps) => (maps.users[orig_u as usize], maps.movies[orig_m as usize]),
                None => (orig_u + 1, orig_m + 1),
            };
            rows.push((ext_u, ext_m, p));
        }
    }
    rows.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let path = if results.iter().any(|r| r.node_id == 0) {
        cfg.out.join("predictions.csv")
    } else {
        cfg.out.join(format!("predictions_node{}.csv", results[0].node_id))
    };
    let mut body = String::from("user,movie,rating_pred\n");
    for (u, m, p) in rows {
        use std::fmt::Write;
        writeln!(body, "{u},{m},{p}").unwrap();
    }
    std::fs::write(&path, body).map_err(io_err(&path))?;
    Ok(())
}
