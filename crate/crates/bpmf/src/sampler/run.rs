//! The full sampling loop: hyperparameter draws, both phases, test scoring,
//! running prediction averages, checkpoints.

use std::ops::Range;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::linalg::dot;
use crate::partition::PartitionPlan;
use crate::ratings::RatingsSplit;
use crate::rng::{CounterRng, Stream};
use crate::schedule::CostModel;
use crate::transport::{OverlapStats, Phase, Transport};

use super::checkpoint::{write_checkpoint, Checkpoint};
use super::hyper::sample_hyper;
use super::phase::{replica_sync, run_phase, NodeView, PhaseSpec};
use super::{HyperParams, LatentMatrix, NwPrior, SamplerConfig, SamplerError};

/// Everything observable about one finished iteration.
#[derive(Debug, Clone)]
pub struct IterationStats {
    /// 1-based iteration ordinal.
    pub iteration: u32,
    pub rmse_sample: f64,
    pub rmse_avg: f64,
    /// RMSE of the current sample over the training ratings.
    pub rmse_train: f64,
    pub phase_movie_secs: f64,
    pub phase_user_secs: f64,
    pub wall_secs: f64,
    /// (num_users + num_movies) / wall_secs.
    pub updates_per_sec: f64,
    /// Cumulative transport counters at the end of this iteration.
    pub transport: OverlapStats,
}

/// Checkpointing and interruption knobs.
#[derive(Default)]
pub struct RunControl {
    pub checkpoint_dir: Option<PathBuf>,
    /// Write a checkpoint every this many iterations (0: only on exit).
    pub checkpoint_every: u32,
    pub resume: Option<Checkpoint>,
    /// Checked at iteration boundaries; set by a signal handler.
    pub interrupt: Option<Arc<AtomicBool>>,
}

/// One node's share of a finished run.
pub struct NodeRunResult {
    pub node_id: usize,
    pub u: LatentMatrix,
    pub v: LatentMatrix,
    pub hyper_u: HyperParams,
    pub hyper_v: HyperParams,
    pub trace: Vec<IterationStats>,
    /// Held-out triples owned by this node (users in the owned range),
    /// sorted by (user, movie), in the plan's index space.
    pub owned_test: Vec<(u32, u32, f64)>,
    /// Post-burn-in averaged prediction per owned test triple (NaN when no
    /// samples were accumulated).
    pub averaged_predictions: Vec<f64>,
    pub interrupted: bool,
}

fn build_node_view(plan: &PartitionPlan, node: usize) -> NodeView {
    let peers: Vec<usize> = (0..plan.num_nodes()).filter(|&p| p != node).collect();
    let expected_items = |dests: &[Vec<u16>]| -> Vec<u32> {
        dests
            .iter()
            .enumerate()
            .filter(|(_, d)| d.contains(&(node as u16)))
            .map(|(i, _)| i as u32)
            .collect()
    };
    let expected_aggs = |rows: usize, bs: usize, owned: &Range<usize>| -> Vec<u32> {
        let first = owned.start / bs;
        let end = owned.end.div_ceil(bs);
        (0..rows.div_ceil(bs)).filter(|&b| b < first || b >= end).map(|b| b as u32).collect()
    };
    let owned_users = plan.ranges_users[node].clone();
    let owned_movies = plan.ranges_movies[node].clone();
    NodeView {
        peers,
        expected_items_movie: expected_items(&plan.comm.dest_movies),
        expected_items_user: expected_items(&plan.comm.dest_users),
        expected_aggs_movie: expected_aggs(
            plan.col_perm.len(),
            plan.block_size_movies,
            &owned_movies,
        ),
        expected_aggs_user: expected_aggs(
            plan.row_perm.len(),
            plan.block_size_users,
            &owned_users,
        ),
        owned_users,
        owned_movies,
    }
}

/// One user block's share of the per-iteration scoring exchange.
struct StatBlock {
    block: u32,
    /// Range into the node's owned test list.
    test_range: Range<usize>,
    /// Owned users inside this block (for training-set scoring).
    users: Range<usize>,
}

struct StatBlocks {
    mine: Vec<StatBlock>,
    /// Peer-owned blocks that will send statistics.
    expected: Vec<u32>,
}

/// A block participates if it contains a test pair or a training rating;
/// both facts are globally known, so every node derives the same sets.
fn build_stat_blocks(
    split: &RatingsSplit,
    owned_test: &[(u32, u32, f64)],
    plan: &PartitionPlan,
    node: usize,
) -> StatBlocks {
    let bs = plan.block_size_users;
    let train = &split.train;
    let num_blocks = train.num_users().div_ceil(bs);
    let block_users =
        |b: usize| (b * bs)..((b + 1) * bs).min(train.num_users());
    let block_has_train =
        |b: usize| block_users(b).any(|u| train.user_degree(u) > 0);
    let mut block_has_test = vec![false; num_blocks];
    for &(u, _, _) in &split.test {
        block_has_test[u as usize / bs] = true;
    }

    let mut mine = Vec::new();
    let owned_users = &plan.ranges_users[node];
    let first_block = owned_users.start / bs;
    let end_block = owned_users.end.div_ceil(bs);
    let mut cursor = 0usize;
    for b in first_block..end_block {
        let users = block_users(b);
        let start = cursor;
        while cursor < owned_test.len() && (owned_test[cursor].0 as usize) < users.end {
            cursor += 1;
        }
        if block_has_test[b] || block_has_train(b) {
            mine.push(StatBlock { block: b as u32, test_range: start..cursor, users });
        }
    }
    debug_assert_eq!(cursor, owned_test.len());

    let expected: Vec<u32> = (0..num_blocks)
        .filter(|&b| {
            let owner = plan.owner_of_user(b * bs);
            owner != node && (block_has_test[b] || block_has_train(b))
        })
        .map(|b| b as u32)
        .collect();
    StatBlocks { mine, expected }
}

/// Execute the sampler on this node. `on_iteration` fires after every
/// iteration with that iteration's statistics.
pub fn run(
    cfg: &SamplerConfig,
    prior: &NwPrior,
    split: &RatingsSplit,
    plan: &PartitionPlan,
    tx: &Transport,
    control: &RunControl,
    on_iteration: &mut dyn FnMut(&IterationStats),
) -> Result<NodeRunResult, SamplerError> {
    cfg.validate()?;
    let node = tx.node_id();
    if plan.num_nodes() != tx.num_nodes() {
        return Err(SamplerError::Config(format!(
            "plan has {} nodes, transport has {}",
            plan.num_nodes(),
            tx.num_nodes()
        )));
    }
    let train = &split.train;
    let num_users = train.num_users();
    let num_movies = train.num_movies();
    if plan.block_size_users != crate::partition::aggregation_block_size(num_users)
        || plan.block_size_movies != crate::partition::aggregation_block_size(num_movies)
    {
        return Err(SamplerError::Config(format!(
            "plan aggregation grid ({}, {}) does not match this build's grid for              {num_users}×{num_movies}",
            plan.block_size_users, plan.block_size_movies
        )));
    }
    let center = if cfg.center { train.global_mean() } else { 0.0 };
    let view = build_node_view(plan, node);

    // owned held-out pairs, sorted for block-stable accumulation order
    let mut owned_test: Vec<(u32, u32, f64)> = split
        .test
        .iter()
        .copied()
        .filter(|&(u, _, _)| view.owned_users.contains(&(u as usize)))
        .collect();
    owned_test.sort_unstable_by_key(|&(u, m, _)| (u, m));
    for &(u, m, _) in &owned_test {
        let m = m as usize;
        let covered = view.owned_movies.contains(&m)
            || plan.comm.dest_movies[m].contains(&(node as u16));
        if !covered {
            return Err(SamplerError::Config(format!(
                "plan never delivers movie {m} needed for test pair of user {u}; \
                 merge test destinations into the communication plan"
            )));
        }
    }
    let stat_blocks = build_stat_blocks(split, &owned_test, plan, node);

    let mut u = LatentMatrix::init(Phase::User, num_users, cfg.k, cfg.seed);
    let mut v = LatentMatrix::init(Phase::Movie, num_movies, cfg.k, cfg.seed);
    let mut pred_sums = vec![0.0f64; owned_test.len()];
    let mut samples: u32 = 0;
    let mut start_iteration: u32 = 0;
    let mut hyper_u: Option<HyperParams> = None;
    let mut hyper_v: Option<HyperParams> = None;

    if let Some(ckpt) = &control.resume {
        validate_checkpoint(ckpt, cfg, plan, node, owned_test.len())?;
        let k = cfg.k;
        for (row, chunk) in
            (ckpt.owned_u.start as usize..ckpt.owned_u.end as usize).zip(ckpt.u_rows.chunks(k))
        {
            u.set_vector(row, chunk);
        }
        for (row, chunk) in
            (ckpt.owned_v.start as usize..ckpt.owned_v.end as usize).zip(ckpt.v_rows.chunks(k))
        {
            v.set_vector(row, chunk);
        }
        pred_sums.copy_from_slice(&ckpt.pred_sums);
        samples = ckpt.samples;
        start_iteration = ckpt.next_iteration;
        hyper_u = Some(ckpt.hyper_u()?);
        hyper_v = Some(ckpt.hyper_v()?);
        // rebuild peer replicas and remote aggregates at a reserved key
        let sync_iter = start_iteration
            .checked_sub(1)
            .ok_or_else(|| SamplerError::Checkpoint("resume at iteration 0".into()))?;
        replica_sync(&mut v, Phase::Movie, sync_iter, &plan.comm.dest_movies, &view, tx)?;
        replica_sync(&mut u, Phase::User, sync_iter, &plan.comm.dest_users, &view, tx)?;
    }

    let mut trace: Vec<IterationStats> = Vec::with_capacity(cfg.iterations as usize);
    let cost = CostModel::default();
    let mut interrupted = false;

    for t in start_iteration..cfg.iterations {
        let iter_start = Instant::now();

        let hv = sample_hyper(&v, prior, &mut CounterRng::new(cfg.seed, t as u64, Stream::HyperMovie, 0))?;
        let movie_start = Instant::now();
        run_phase(
            &mut v,
            &u,
            &PhaseSpec {
                phase: Phase::Movie,
                iteration: t,
                hyper: &hv,
                ratings: train,
                dests: &plan.comm.dest_movies,
                view: &view,
                cfg,
                cost: &cost,
                center,
                tx,
            },
        )?;
        let phase_movie_secs = movie_start.elapsed().as_secs_f64();
        hyper_v = Some(hv);

        let hu = sample_hyper(&u, prior, &mut CounterRng::new(cfg.seed, t as u64, Stream::HyperUser, 0))?;
        let user_start = Instant::now();
        run_phase(
            &mut u,
            &v,
            &PhaseSpec {
                phase: Phase::User,
                iteration: t,
                hyper: &hu,
                ratings: train,
                dests: &plan.comm.dest_users,
                view: &view,
                cfg,
                cost: &cost,
                center,
                tx,
            },
        )?;
        let phase_user_secs = user_start.elapsed().as_secs_f64();
        hyper_u = Some(hu);

        // score the held-out pairs with the current sample and the running
        // average, then all-gather per-block partial sums
        let averaging = t >= cfg.burnin;
        if averaging {
            samples += 1;
        }
        let mut my_stats: Vec<(u32, Vec<f64>)> = Vec::with_capacity(stat_blocks.mine.len());
        for sb in &stat_blocks.mine {
            let mut sq_sample = 0.0f64;
            let mut sq_avg = 0.0f64;
            let count = sb.test_range.len() as f64;
            for idx in sb.test_range.clone() {
                let (user, movie, rating) = owned_test[idx];
                let mut p = dot(u.vector(user as usize), v.vector(movie as usize)) + center;
                if let Some((lo, hi)) = cfg.clamp {
                    p = p.clamp(lo, hi);
                }
                if averaging {
                    pred_sums[idx] += p;
                }
                let d = p - rating;
                sq_sample += d * d;
                if samples > 0 {
                    let da = pred_sums[idx] / samples as f64 - rating;
                    sq_avg += da * da;
                }
            }
            let mut sq_train = 0.0f64;
            let mut train_count = 0.0f64;
            for user in sb.users.clone() {
                let uvec = u.vector(user);
                for &(movie, rating) in train.ratings_of_user(user) {
                    let mut p = dot(uvec, v.vector(movie as usize)) + center;
                    if let Some((lo, hi)) = cfg.clamp {
                        p = p.clamp(lo, hi);
                    }
                    let d = p - rating;
                    sq_train += d * d;
                    train_count += 1.0;
                }
            }
            my_stats.push((sb.block, vec![sq_sample, sq_avg, count, sq_train, train_count]));
        }
        let others = tx.exchange_stats(t, my_stats.clone(), &stat_blocks.expected)?;
        // fold every block in ascending block order
        let mut all: Vec<(u32, Vec<f64>)> = my_stats;
        all.extend(others);
        all.sort_unstable_by_key(|&(b, _)| b);
        let (mut sq_sample, mut sq_avg, mut count) = (0.0f64, 0.0f64, 0.0f64);
        let (mut sq_train, mut train_count) = (0.0f64, 0.0f64);
        for (_, payload) in &all {
            sq_sample += payload[0];
            sq_avg += payload[1];
            count += payload[2];
            sq_train += payload[3];
            train_count += payload[4];
        }
        let rmse_sample = if count > 0.0 { (sq_sample / count).sqrt() } else { f64::NAN };
        let rmse_avg = if samples > 0 && count > 0.0 { (sq_avg / count).sqrt() } else { f64::NAN };
        let rmse_train =
            if train_count > 0.0 { (sq_train / train_count).sqrt() } else { f64::NAN };

        let wall_secs = iter_start.elapsed().as_secs_f64();
        let stats = IterationStats {
            iteration: t + 1,
            rmse_sample,
            rmse_avg,
            rmse_train,
            phase_movie_secs,
            phase_user_secs,
            wall_secs,
            updates_per_sec: (num_users + num_movies) as f64 / wall_secs.max(1e-12),
            transport: tx.collect_stats(),
        };
        on_iteration(&stats);
        trace.push(stats);

        interrupted = control
            .interrupt
            .as_ref()
            .map(|flag| flag.load(Ordering::Relaxed))
            .unwrap_or(false);
        let due = control.checkpoint_every > 0 && (t + 1) % control.checkpoint_every == 0;
        let last = t + 1 == cfg.iterations;
        if control.checkpoint_dir.is_some() && (due || last || interrupted) {
            let ckpt = assemble_checkpoint(
                cfg,
                plan,
                node,
                t + 1,
                &u,
                &v,
                hyper_u.as_ref().unwrap(),
                hyper_v.as_ref().unwrap(),
                &pred_sums,
                samples,
            );
            let dir = control.checkpoint_dir.as_ref().unwrap();
            std::fs::create_dir_all(dir)?;
            write_checkpoint(&ckpt, &dir.join(format!("checkpoint_node{node}.bin")))?;
        }
        if interrupted {
            break;
        }
    }

    let averaged_predictions: Vec<f64> = pred_sums
        .iter()
        .map(|&s| if samples > 0 { s / samples as f64 } else { f64::NAN })
        .collect();

    let (hyper_u, hyper_v) = match (hyper_u, hyper_v) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(SamplerError::Config(
                "run finished without drawing hyperparameters (zero iterations?)".into(),
            ))
        }
    };

    Ok(NodeRunResult {
        node_id: node,
        u,
        v,
        hyper_u,
        hyper_v,
        trace,
        owned_test,
        averaged_predictions,
        interrupted,
    })
}

fn validate_checkpoint(
    ckpt: &Checkpoint,
    cfg: &SamplerConfig,
    plan: &PartitionPlan,
    node: usize,
    owned_test_len: usize,
) -> Result<(), SamplerError> {
    let fail = |msg: String| Err(SamplerError::Checkpoint(msg));
    if ckpt.k as usize != cfg.k {
        return fail(format!("checkpoint k={}, config k={}", ckpt.k, cfg.k));
    }
    if ckpt.seed != cfg.seed {
        return fail(format!("checkpoint seed={}, config seed={}", ckpt.seed, cfg.seed));
    }
    if ckpt.alpha.to_bits() != cfg.alpha.to_bits() {
        return fail(format!("checkpoint alpha={}, config alpha={}", ckpt.alpha, cfg.alpha));
    }
    if ckpt.center != cfg.center {
        return fail("centering flag differs from checkpoint".into());
    }
    if ckpt.node_id as usize != node || ckpt.num_nodes as usize != plan.num_nodes() {
        return fail(format!(
            "checkpoint written by node {}/{} nodes, resuming as {}/{}",
            ckpt.node_id,
            ckpt.num_nodes,
            node,
            plan.num_nodes()
        ));
    }
    let owned_u = &plan.ranges_users[node];
    let owned_v = &plan.ranges_movies[node];
    if ckpt.owned_u != (owned_u.start as u64..owned_u.end as u64)
        || ckpt.owned_v != (owned_v.start as u64..owned_v.end as u64)
    {
        return fail("checkpoint ownership ranges do not match the plan".into());
    }
    if ckpt.pred_sums.len() != owned_test_len {
        return fail(format!(
            "checkpoint holds {} prediction sums, split yields {}",
            ckpt.pred_sums.len(),
            owned_test_len
        ));
    }
    if ckpt.next_iteration >= cfg.iterations {
        return fail(format!(
            "checkpoint already at iteration {} of {}",
            ckpt.next_iteration, cfg.iterations
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn assemble_checkpoint(
    cfg: &SamplerConfig,
    plan: &PartitionPlan,
    node: usize,
    next_iteration: u32,
    u: &LatentMatrix,
    v: &LatentMatrix,
    hyper_u: &HyperParams,
    hyper_v: &HyperParams,
    pred_sums: &[f64],
    samples: u32,
) -> Checkpoint {
    let owned_u = &plan.ranges_users[node];
    let owned_v = &plan.ranges_movies[node];
    let k = cfg.k;
    Checkpoint {
        next_iteration,
        node_id: node as u32,
        num_nodes: plan.num_nodes() as u32,
        k: k as u32,
        seed: cfg.seed,
        alpha: cfg.alpha,
        center: cfg.center,
        samples,
        owned_u: owned_u.start as u64..owned_u.end as u64,
        u_rows: u.data()[owned_u.start * k..owned_u.end * k].to_vec(),
        owned_v: owned_v.start as u64..owned_v.end as u64,
        v_rows: v.data()[owned_v.start * k..owned_v.end * k].to_vec(),
        hyper_u_mu: hyper_u.mu.clone(),
        hyper_u_lambda: hyper_u.lambda.as_slice().to_vec(),
        hyper_v_mu: hyper_v.mu.clone(),
        hyper_v_lambda: hyper_v.lambda.as_slice().to_vec(),
        pred_sums: pred_sums.to_vec(),
    }
}

/// Predicted rating for one (user, movie) pair.
pub fn predict(u_vec: &[f64], v_vec: &[f64], center: f64) -> f64 {
    dot(u_vec, v_vec) + center
}

/// Root mean square error between predictions and observations.
pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64, SamplerError> {
    if predictions.len() != truth.len() {
        return Err(SamplerError::Config(format!(
            "length mismatch: {} predictions vs {} observations",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(SamplerError::Config("rmse of empty lists".into()));
    }
    let sq: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / predictions.len() as f64).sqrt())
}
