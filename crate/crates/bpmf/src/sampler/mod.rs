//! Gibbs sampler over latent user and movie factors.
//!
//! One iteration draws movie-side hyperparameters from the current movie
//! factors, updates every movie vector, does the same for the user side,
//! then scores the held-out ratings. Aggregates needed by the hyperparameter
//! draws (factor sum and scatter) are accumulated during the update passes
//! in fixed-size index blocks; folding the per-block partials in block order
//! makes the totals — and therefore the whole chain — bitwise independent of
//! worker and node topology.

mod checkpoint;
mod hyper;
mod item;
mod phase;
mod run;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use hyper::{nw_posterior, sample_hyper, sample_hyper_from_aggregates, NwPosterior};
pub use item::{item_posterior, update_item, ItemPosterior, ItemScratch};
pub use run::{predict, rmse, run, IterationStats, NodeRunResult, RunControl};

use thiserror::Error;

use crate::linalg::{cholesky, KernelError, SquareMatrix};
use crate::partition::aggregation_block_size;
use crate::rng::{CounterRng, Stream};
use crate::sampling::standard_normal_vec;
use crate::transport::{Phase, TransportError};

/// Latent dimension bounds accepted by the sampler.
pub const MAX_LATENT_DIM: usize = 1024;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("checkpoint problem: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Run parameters of the sampler itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub k: usize,
    /// Rating noise precision α.
    pub alpha: f64,
    pub iterations: u32,
    pub burnin: u32,
    pub seed: u64,
    /// Subtract the training mean from ratings during sampling.
    pub center: bool,
    /// Clamp predictions into this closed range.
    pub clamp: Option<(f64, f64)>,
    /// Worker threads per node.
    pub workers: usize,
}

impl SamplerConfig {
    pub fn new(k: usize, iterations: u32, burnin: u32, seed: u64) -> Self {
        SamplerConfig {
            k,
            alpha: 2.0,
            iterations,
            burnin,
            seed,
            center: true,
            clamp: None,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.k == 0 || self.k > MAX_LATENT_DIM {
            return Err(SamplerError::Config(format!(
                "k must be in 1..={MAX_LATENT_DIM}, got {}",
                self.k
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(SamplerError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.burnin >= self.iterations {
            return Err(SamplerError::Config(format!(
                "burnin {} must be below iterations {}",
                self.burnin, self.iterations
            )));
        }
        if self.workers == 0 {
            return Err(SamplerError::Config("workers must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(SamplerError::Config(format!("bad clamp range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Fixed Normal-Wishart hyperprior constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NwPrior {
    pub mu0: Vec<f64>,
    pub beta0: f64,
    pub nu0: f64,
    pub w0: SquareMatrix,
}

impl NwPrior {
    /// The conventional uninformative choice: μ₀ = 0, β₀ = 2, ν₀ = K,
    /// W₀ = I.
    pub fn uninformative(k: usize) -> Self {
        NwPrior { mu0: vec![0.0; k], beta0: 2.0, nu0: k as f64, w0: SquareMatrix::identity(k) }
    }
}

/// Per-side Gaussian prior (mean μ, precision Λ) with cached factor and Λμ.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub mu: Vec<f64>,
    pub lambda: SquareMatrix,
    pub lambda_chol: SquareMatrix,
    pub lambda_mu: Vec<f64>,
}

impl HyperParams {
    pub fn from_parts(mu: Vec<f64>, lambda: SquareMatrix) -> Result<Self, KernelError> {
        let lambda_chol = cholesky(&lambda)?;
        let lambda_mu = lambda.mat_vec(&mu);
        Ok(HyperParams { mu, lambda, lambda_chol, lambda_mu })
    }

    pub(crate) fn from_draw(mu: Vec<f64>, lambda: SquareMatrix, lambda_chol: SquareMatrix) -> Self {
        let lambda_mu = lambda.mat_vec(&mu);
        HyperParams { mu, lambda, lambda_chol, lambda_mu }
    }
}

/// One side's factor matrix: per-item K-vectors plus fused aggregates.
///
/// `agg_sum` and `agg_scatter` are rebuilt during every update pass from
/// per-block partials; blocks are contiguous index ranges whose size depends
/// only on the row count.
#[derive(Debug, Clone)]
pub struct LatentMatrix {
    side: Phase,
    rows: usize,
    k: usize,
    block_size: usize,
    data: Vec<f64>,
    block_sums: Vec<f64>,
    block_scatters: Vec<f64>,
    agg_sum: Vec<f64>,
    agg_scatter: SquareMatrix,
}

impl LatentMatrix {
    /// Deterministic initialization: item i gets K standard-normal draws
    /// keyed by (seed, side, i), identical on every node.
    pub fn init(side: Phase, rows: usize, k: usize, seed: u64) -> Self {
        let stream = match side {
            Phase::Movie => Stream::InitMovie,
            Phase::User => Stream::InitUser,
        };
        let mut data = Vec::with_capacity(rows * k);
        for i in 0..rows {
            let mut rng = CounterRng::new(seed, 0, stream, i as u64);
            data.extend(standard_normal_vec(k, &mut rng));
        }
        Self::from_data(side, rows, k, data)
    }

    /// Wrap existing vectors (row-major, `rows·k` long).
    pub fn from_data(side: Phase, rows: usize, k: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * k);
        let block_size = aggregation_block_size(rows);
        let num_blocks = rows.div_ceil(block_size);
        let mut m = LatentMatrix {
            side,
            rows,
            k,
            block_size,
            data,
            block_sums: vec![0.0; num_blocks * k],
            block_scatters: vec![0.0; num_blocks * k * k],
            agg_sum: vec![0.0; k],
            agg_scatter: SquareMatrix::zeros(k),
        };
        for b in 0..num_blocks {
            m.recompute_block_partial(b);
        }
        m.fold_aggregates();
        m
    }

    pub fn from_vectors(side: Phase, k: usize, vectors: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(vectors.len() * k);
        for v in vectors {
            assert_eq!(v.len(), k);
            data.extend_from_slice(v);
        }
        Self::from_data(side, vectors.len(), k, data)
    }

    pub fn side(&self) -> Phase {
        self.side
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.rows.div_ceil(self.block_size)
    }

    /// Item range covered by one block.
    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        let start = block * self.block_size;
        start..(start + self.block_size).min(self.rows)
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn set_vector(&mut self, i: usize, v: &[f64]) {
        assert_eq!(v.len(), self.k);
        self.data[i * self.k..(i + 1) * self.k].copy_from_slice(v);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn agg_sum(&self) -> &[f64] {
        &self.agg_sum
    }

    pub fn agg_scatter(&self) -> &SquareMatrix {
        &self.agg_scatter
    }

    /// Mutable views of item storage and block partials, chunked per block,
    /// for handing disjoint slices to workers.
    pub(crate) fn block_storage_mut(
        &mut self,
    ) -> (
        std::slice::ChunksMut<'_, f64>,
        std::slice::ChunksMut<'_, f64>,
        std::slice::ChunksMut<'_, f64>,
    ) {
        let k = self.k;
        (
            self.data.chunks_mut(self.block_size * k),
            self.block_sums.chunks_mut(k),
            self.block_scatters.chunks_mut(k * k),
        )
    }

    /// Rebuild one block's partial sum and scatter from its vectors, in
    /// ascending item order.
    pub fn recompute_block_partial(&mut self, block: usize) {
        let k = self.k;
        let range = self.block_range(block);
        let sum = &mut self.block_sums[block * k..(block + 1) * k];
        let scat = &mut self.block_scatters[block * k * k..(block + 1) * k * k];
        sum.fill(0.0);
        scat.fill(0.0);
        for i in range {
            let v = &self.data[i * k..(i + 1) * k];
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            accumulate_outer(scat, v, k);
        }
    }

    /// Wire payload of one block partial: K sums then K² scatter entries.
    pub fn block_partial_payload(&self, block: usize) -> Vec<f64> {
        let k = self.k;
        let mut payload = Vec::with_capacity(k + k * k);
        payload.extend_from_slice(&self.block_sums[block * k..(block + 1) * k]);
        payload.extend_from_slice(&self.block_scatters[block * k * k..(block + 1) * k * k]);
        payload
    }

    /// Install a block partial received from the block's owner.
    pub fn set_block_partial(&mut self, block: usize, payload: &[f64]) {
        let k = self.k;
        assert_eq!(payload.len(), k + k * k, "bad aggregate payload length");
        self.block_sums[block * k..(block + 1) * k].copy_from_slice(&payload[..k]);
        self.block_scatters[block * k * k..(block + 1) * k * k].copy_from_slice(&payload[k..]);
    }

    /// Fold all block partials, in block order, into the full aggregates.
    pub fn fold_aggregates(&mut self) {
        let k = self.k;
        let num_blocks = self.rows.div_ceil(self.block_size);
        self.agg_sum.fill(0.0);
        let scat = self.agg_scatter.as_mut_slice();
        scat.fill(0.0);
        for b in 0..num_blocks {
            for (a, x) in self.agg_sum.iter_mut().zip(&self.block_sums[b * k..(b + 1) * k]) {
                *a += x;
            }
            for (a, x) in scat.iter_mut().zip(&self.block_scatters[b * k * k..(b + 1) * k * k]) {
                *a += x;
            }
        }
    }

    /// Straight in-order recomputation of the aggregates, bypassing blocks.
    /// Test oracle for the fused path.
    pub fn aggregates_from_scratch(&self) -> (Vec<f64>, SquareMatrix) {
        let k = self.k;
        let mut sum = vec![0.0; k];
        let mut scatter = SquareMatrix::zeros(k);
        for i in 0..self.rows {
            let v = self.vector(i);
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            scatter.add_outer(v, 1.0);
        }
        (sum, scatter)
    }
}

/// scat (row-major k×k slice) += v vᵀ
pub(crate) fn accumulate_outer(scat: &mut [f64], v: &[f64], k: usize) {
    debug_assert_eq!(scat.len(), k * k);
    for i in 0..k {
        let vi = v[i];
        let row = &mut scat[i * k..(i + 1) * k];
        for (cell, &vj) in row.iter_mut().zip(v) {
            *cell += vi * vj;
        }
    }
}
