//! Distributed Bayesian probabilistic matrix factorization.
//!
//! A Gibbs sampler over latent user and movie factors with Normal-Wishart
//! hyperpriors, engineered for reproducible parallel and distributed
//! execution:
//!
//! - keyed counter-based randomness and fixed reduction orders make the
//!   sampled chain bitwise-invariant to thread count, node count and send
//!   policy;
//! - a cost model picks the cheapest update kernel per item (rank-one
//!   factor maintenance below a rating-count threshold, dense or chunked
//!   accumulation above it) and drives deterministic load balancing;
//! - rows and columns of the rating matrix are reordered for locality, and
//!   contiguous factor ranges are assigned to nodes so that the sparsity
//!   pattern dictates exactly which items each node must receive;
//! - an asynchronous transport (in-process queues or TCP) overlaps item
//!   exchange with computation under eager, buffered or broadcast policies
//!   and accounts for the overlap it achieves.
//!
//! Start with the `examples/` directory; each example is a small runnable
//! tour of one capability. The `bpmf` binary drives the full pipeline:
//! load, split, plan, sample, report.

pub mod engine;
pub mod fixture;
pub mod linalg;
pub mod partition;
pub mod ratings;
pub mod rng;
pub mod sampler;
pub mod sampling;
pub mod schedule;
pub mod transport;

pub use linalg::{KernelError, SolveSide, SquareMatrix};
pub use rng::{CounterRng, Stream};
pub use sampler::{HyperParams, LatentMatrix, NwPrior, SamplerConfig, SamplerError};
pub use transport::{ItemMessage, OverlapStats, Phase, SendPolicy, Transport};
