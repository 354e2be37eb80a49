//! One phase: update every owned item of one side, ship updates, rendezvous.
//!
//! Work units are aggregation blocks (contiguous item ranges with one owner),
//! grouped across workers by LPT on modeled cost. Each worker walks its
//! blocks in ascending item order, so a block's partial sums accumulate in a
//! fixed order no matter which worker runs it or how many workers exist.
//! After the barrier, received item vectors overwrite peer-owned rows and
//! received block partials complete the side's aggregates.

use std::ops::Range;

use crate::linalg::axpy;
use crate::ratings::SparseRatings;
use crate::rng::{CounterRng, Stream};
use crate::schedule::{build_task_groups, estimate_cost, select_method, CostModel};
use crate::transport::{ExpectedPhase, ItemMessage, Phase, Transport};

use super::item::{update_item, ItemScratch};
use super::{accumulate_outer, HyperParams, LatentMatrix, SamplerConfig, SamplerError};

/// Static per-node facts derived from the plan once per run.
pub(crate) struct NodeView {
    pub peers: Vec<usize>,
    pub owned_users: Range<usize>,
    pub owned_movies: Range<usize>,
    pub expected_items_movie: Vec<u32>,
    pub expected_items_user: Vec<u32>,
    pub expected_aggs_movie: Vec<u32>,
    pub expected_aggs_user: Vec<u32>,
}

impl NodeView {
    pub fn owned(&self, phase: Phase) -> Range<usize> {
        match phase {
            Phase::Movie => self.owned_movies.clone(),
            Phase::User => self.owned_users.clone(),
        }
    }

    fn expect(&self, phase: Phase) -> ExpectedPhase {
        let (items, aggs) = match phase {
            Phase::Movie => (&self.expected_items_movie, &self.expected_aggs_movie),
            Phase::User => (&self.expected_items_user, &self.expected_aggs_user),
        };
        ExpectedPhase {
            items: items.clone(),
            agg_blocks: aggs.clone(),
            marker_peers: self.peers.clone(),
        }
    }
}

pub(crate) struct PhaseSpec<'a> {
    pub phase: Phase,
    pub iteration: u32,
    pub hyper: &'a HyperParams,
    pub ratings: &'a SparseRatings,
    pub dests: &'a [Vec<u16>],
    pub view: &'a NodeView,
    pub cfg: &'a SamplerConfig,
    pub cost: &'a CostModel,
    pub center: f64,
    pub tx: &'a Transport,
}

struct BlockSlot<'a> {
    items: Range<usize>,
    data: &'a mut [f64],
    sum: &'a mut [f64],
    scat: &'a mut [f64],
}

/// Update all owned items of `side` conditioned on `others`, exchange, and
/// rebuild the aggregates.
pub(crate) fn run_phase(
    side: &mut LatentMatrix,
    others: &LatentMatrix,
    spec: &PhaseSpec<'_>,
) -> Result<(), SamplerError> {
    let k = side.k();
    let bs = side.block_size();
    let owned = spec.view.owned(spec.phase);
    assert_eq!(owned.start % bs, 0, "node range must be block-aligned");
    let first_block = owned.start / bs;
    let end_block = owned.end.div_ceil(bs);
    let owned_blocks: Vec<usize> = (first_block..end_block).collect();

    let degree = |i: usize| match spec.phase {
        Phase::Movie => spec.ratings.movie_degree(i),
        Phase::User => spec.ratings.user_degree(i),
    };
    let block_costs: Vec<f64> = owned_blocks
        .iter()
        .map(|&b| side.block_range(b).map(|i| estimate_cost(degree(i), spec.cost)).sum())
        .collect();
    let groups = build_task_groups(&block_costs, spec.cfg.workers);

    {
        let _compute = spec.tx.compute_scope();
        let block_ranges: Vec<Range<usize>> =
            (0..side.num_blocks()).map(|b| side.block_range(b)).collect();
        let (data_chunks, sum_chunks, scat_chunks) = side.block_storage_mut();
        let mut slots: Vec<Option<BlockSlot>> = data_chunks
            .zip(sum_chunks)
            .zip(scat_chunks)
            .enumerate()
            .map(|(b, ((data, sum), scat))| {
                (b >= first_block && b < end_block).then_some(BlockSlot {
                    items: block_ranges[b].clone(),
                    data,
                    sum,
                    scat,
                })
            })
            .collect();

        let results: Vec<Result<(), SamplerError>> = std::thread::scope(|s| {
            let handles: Vec<_> = groups
                .iter()
                .map(|group| {
                    let mine: Vec<BlockSlot> = group
                        .iter()
                        .map(|&ord| slots[owned_blocks[ord]].take().expect("unique block owner"))
                        .collect();
                    s.spawn(move || worker_loop(mine, others, spec, k))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("phase worker panicked")).collect()
        });
        for r in results {
            r?;
        }
    }

    let agg_out: Vec<(u32, Vec<f64>)> = owned_blocks
        .iter()
        .map(|&b| (b as u32, side.block_partial_payload(b)))
        .collect();
    let inbox = spec.tx.end_phase(spec.phase, spec.iteration, agg_out, &spec.view.expect(spec.phase))?;

    for (idx, payload) in &inbox.items {
        if payload.len() != k {
            return Err(SamplerError::Config(format!(
                "received item {idx} with dimension {} (expected {k})",
                payload.len()
            )));
        }
        side.set_vector(*idx as usize, payload);
    }
    for (block, payload) in &inbox.agg_blocks {
        side.set_block_partial(*block as usize, payload);
    }
    side.fold_aggregates();
    Ok(())
}

fn worker_loop(
    mine: Vec<BlockSlot<'_>>,
    others: &LatentMatrix,
    spec: &PhaseSpec<'_>,
    k: usize,
) -> Result<(), SamplerError> {
    let stream = match spec.phase {
        Phase::Movie => Stream::UpdateMovie,
        Phase::User => Stream::UpdateUser,
    };
    let mut scratch = ItemScratch::new(k);
    for slot in mine {
        slot.sum.fill(0.0);
        slot.scat.fill(0.0);
        for (local, i) in slot.items.clone().enumerate() {
            let ratings = match spec.phase {
                Phase::Movie => spec.ratings.ratings_of_movie(i),
                Phase::User => spec.ratings.ratings_of_user(i),
            };
            let method = select_method(ratings.len(), spec.cost);
            let mut rng =
                CounterRng::new(spec.cfg.seed, spec.iteration as u64, stream, i as u64);
            let v = update_item(
                others,
                ratings,
                spec.center,
                spec.hyper,
                spec.cfg.alpha,
                &mut rng,
                method,
                &mut scratch,
            )?;
            slot.data[local * k..(local + 1) * k].copy_from_slice(&v);
            axpy(1.0, &v, slot.sum);
            accumulate_outer(slot.scat, &v, k);

            let dests = &spec.dests[i];
            for &dest in dests {
                spec.tx.send_item(
                    dest as usize,
                    ItemMessage::new(spec.phase, spec.iteration, i as u32, v.clone()),
                )?;
            }
        }
    }
    Ok(())
}

/// Ship owned rows and block partials without updating anything; used to
/// rebuild peer replicas and remote aggregates after a resume.
pub(crate) fn replica_sync(
    side: &mut LatentMatrix,
    phase: Phase,
    sync_iteration: u32,
    dests: &[Vec<u16>],
    view: &NodeView,
    tx: &Transport,
) -> Result<(), SamplerError> {
    let owned = view.owned(phase);
    let bs = side.block_size();
    let first_block = owned.start / bs;
    let end_block = owned.end.div_ceil(bs);
    for b in first_block..end_block {
        side.recompute_block_partial(b);
    }
    for i in owned.clone() {
        for &dest in &dests[i] {
            tx.send_item(
                dest as usize,
                ItemMessage::new(phase, sync_iteration, i as u32, side.vector(i).to_vec()),
            )?;
        }
    }
    let agg_out: Vec<(u32, Vec<f64>)> = (first_block..end_block)
        .map(|b| (b as u32, side.block_partial_payload(b)))
        .collect();
    let inbox = tx.end_phase(phase, sync_iteration, agg_out, &view.expect(phase))?;
    for (idx, payload) in &inbox.items {
        side.set_vector(*idx as usize, payload);
    }
    for (block, payload) in &inbox.agg_blocks {
        side.set_block_partial(*block as usize, payload);
    }
    side.fold_aggregates();
    Ok(())
}
