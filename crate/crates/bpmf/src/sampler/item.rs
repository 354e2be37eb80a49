//! The per-item Gaussian conditional update.
//!
//! For item i with ratings r_ij against opposite-side vectors v_j:
//!
//!   P    = Λ + α Σ_j v_j v_jᵀ
//!   mean = P⁻¹ (Λμ + α Σ_j r_ij v_j)
//!   draw ~ N(mean, P⁻¹)
//!
//! Sums run in stored (ascending-index) order. The three kernels build the
//! same factor by different routes — rank-one maintenance, dense
//! accumulation, or chunked accumulation with fixed-order merge — so their
//! draws agree to factor roundoff; the noise vector is consumed only after
//! the posterior is built, making it identical across kernels for one key.

use crate::linalg::{
    cholesky, chol_rank1_update_in_place, tri_solve_in_place, KernelError, SolveSide, SquareMatrix,
};
use crate::rng::CounterRng;
use crate::sampling::sample_mvn;
use crate::schedule::UpdateMethod;

use super::{accumulate_outer, HyperParams, LatentMatrix};

/// Ratings per accumulation chunk in the parallel kernel. Fixed by data
/// size, never by worker count, so the merge order is topology-invariant.
const PAR_CHUNK: usize = 2048;
/// Below this many ratings the chunked kernel runs its chunks inline.
const PAR_SPAWN_MIN: usize = 8192;
const PAR_MAX_THREADS: usize = 4;

/// Reusable per-worker buffers.
pub struct ItemScratch {
    chol: SquareMatrix,
    b: Vec<f64>,
    w: Vec<f64>,
}

impl ItemScratch {
    pub fn new(k: usize) -> Self {
        ItemScratch { chol: SquareMatrix::zeros(k), b: vec![0.0; k], w: vec![0.0; k] }
    }
}

/// The conditional's Cholesky factor and mean.
#[derive(Debug, Clone)]
pub struct ItemPosterior {
    pub precision_chol: SquareMatrix,
    pub mean: Vec<f64>,
}

/// Build the conditional for one item. `rating_offset` is subtracted from
/// every rating (the training-mean centering hook).
pub fn item_posterior(
    others: &LatentMatrix,
    ratings: &[(u32, f64)],
    rating_offset: f64,
    hyper: &HyperParams,
    alpha: f64,
    method: UpdateMethod,
    scratch: &mut ItemScratch,
) -> Result<ItemPosterior, KernelError> {
    let k = others.k();
    debug_assert_eq!(hyper.mu.len(), k);

    scratch.b.clear();
    scratch.b.extend_from_slice(&hyper.lambda_mu);

    let chol = match method {
        UpdateMethod::RankOne => {
            let sqrt_alpha = alpha.sqrt();
            scratch.chol = hyper.lambda_chol.clone();
            for &(j, r) in ratings {
                let v = others.vector(j as usize);
                for (w, x) in scratch.w.iter_mut().zip(v) {
                    *w = sqrt_alpha * x;
                }
                chol_rank1_update_in_place(&mut scratch.chol, &mut scratch.w);
                let weight = alpha * (r - rating_offset);
                for (bi, x) in scratch.b.iter_mut().zip(v) {
                    *bi += weight * x;
                }
            }
            scratch.chol.clone()
        }
        UpdateMethod::SeqCholesky => {
            let mut precision = hyper.lambda.clone();
            for &(j, r) in ratings {
                let v = others.vector(j as usize);
                precision.add_outer(v, alpha);
                let weight = alpha * (r - rating_offset);
                for (bi, x) in scratch.b.iter_mut().zip(v) {
                    *bi += weight * x;
                }
            }
            cholesky(&precision)?
        }
        UpdateMethod::ParCholesky => {
            let (scatter_chunks, b_chunks) = chunked_accumulation(others, ratings, rating_offset);
            let mut precision = hyper.lambda.clone();
            // fixed chunk-order merge
            let pslice = precision.as_mut_slice();
            for chunk in &scatter_chunks {
                for (p, c) in pslice.iter_mut().zip(chunk) {
                    *p += alpha * c;
                }
            }
            for chunk in &b_chunks {
                for (bi, c) in scratch.b.iter_mut().zip(chunk) {
                    *bi += alpha * c;
                }
            }
            cholesky(&precision)?
        }
    };

    // mean = P⁻¹ b via the factor
    let mut mean = scratch.b.clone();
    tri_solve_in_place(&chol, &mut mean, SolveSide::Lower)?;
    tri_solve_in_place(&chol, &mut mean, SolveSide::LowerTransposed)?;
    Ok(ItemPosterior { precision_chol: chol, mean })
}

/// Per-chunk raw sums (unscaled by α), computed independently per chunk.
/// Chunks may be evaluated by sub-workers; results merge in chunk order
/// either way.
fn chunked_accumulation(
    others: &LatentMatrix,
    ratings: &[(u32, f64)],
    rating_offset: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = others.k();
    let chunks: Vec<&[(u32, f64)]> = ratings.chunks(PAR_CHUNK).collect();
    let one_chunk = |chunk: &[(u32, f64)]| {
        let mut scatter = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for &(j, r) in chunk {
            let v = others.vector(j as usize);
            accumulate_outer(&mut scatter, v, k);
            let weight = r - rating_offset;
            for (bi, x) in b.iter_mut().zip(v) {
                *bi += weight * x;
            }
        }
        (scatter, b)
    };

    let results: Vec<(Vec<f64>, Vec<f64>)> = if ratings.len() >= PAR_SPAWN_MIN && chunks.len() > 1
    {
        let threads = PAR_MAX_THREADS.min(chunks.len());
        let mut slots: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; chunks.len()];
        std::thread::scope(|s| {
            let mut handles = Vec::with_capacity(threads);
            for t in 0..threads {
                let chunks = &chunks;
                let one_chunk = &one_chunk;
                handles.push(s.spawn(move || {
                    let mut out = Vec::new();
                    let mut c = t;
                    while c < chunks.len() {
                        out.push((c, one_chunk(chunks[c])));
                        c += threads;
                    }
                    out
                }));
            }
            for h in handles {
                for (c, res) in h.join().expect("chunk worker") {
                    slots[c] = Some(res);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("all chunks computed")).collect()
    } else {
        chunks.iter().map(|c| one_chunk(c)).collect()
    };

    results.into_iter().unzip()
}

/// Draw the item's new vector: build the conditional, then sample.
#[allow(clippy::too_many_arguments)]
pub fn update_item(
    others: &LatentMatrix,
    ratings: &[(u32, f64)],
    rating_offset: f64,
    hyper: &HyperParams,
    alpha: f64,
    rng: &mut CounterRng,
    method: UpdateMethod,
    scratch: &mut ItemScratch,
) -> Result<Vec<f64>, KernelError> {
    let post = item_posterior(others, ratings, rating_offset, hyper, alpha, method, scratch)?;
    sample_mvn(&post.mean, &post.precision_chol, rng)
}
