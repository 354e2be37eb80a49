//! Per-item kernel selection and deterministic load balancing.
//!
//! An item update costs roughly a fixed amount plus an amount per rating.
//! Items below a rating-count threshold use the rank-one update; very heavy
//! items split their accumulation across sub-workers. Work groups are formed
//! by longest-processing-time greedy so that the assignment is a pure
//! function of the costs, not of runtime timing.

use std::fmt::Write as _;
use std::time::Instant;

use crate::linalg::SquareMatrix;
use crate::rng::{CounterRng, Stream};
use crate::sampling::standard_normal_vec;

/// The three item-update kernels, cheapest serial first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMethod {
    /// O(nnz·K²) rank-one maintenance of the precision factor.
    RankOne,
    /// Dense accumulation then one O(K³) factorization.
    SeqCholesky,
    /// Chunked accumulation mergeable across sub-workers, then factorization.
    ParCholesky,
}

/// Workload model: cost(nnz) = fixed_cost + per_rating_cost · nnz, plus the
/// two selection thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub fixed_cost: f64,
    pub per_rating_cost: f64,
    pub rank1_threshold: usize,
    pub parallel_threshold: usize,
}

pub const DEFAULT_RANK1_THRESHOLD: usize = 1000;
pub const DEFAULT_PARALLEL_THRESHOLD: usize = 10 * DEFAULT_RANK1_THRESHOLD;

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            fixed_cost: 3.0,
            per_rating_cost: 1.0,
            rank1_threshold: DEFAULT_RANK1_THRESHOLD,
            parallel_threshold: DEFAULT_PARALLEL_THRESHOLD,
        }
    }
}

/// Predicted cost of updating an item with `nnz` ratings.
pub fn estimate_cost(nnz: usize, m: &CostModel) -> f64 {
    m.fixed_cost + m.per_rating_cost * nnz as f64
}

/// Kernel choice as a step function of the rating count.
pub fn select_method(nnz: usize, m: &CostModel) -> UpdateMethod {
    if nnz < m.rank1_threshold {
        UpdateMethod::RankOne
    } else if nnz >= m.parallel_threshold {
        UpdateMethod::ParCholesky
    } else {
        UpdateMethod::SeqCholesky
    }
}

/// Partition item indices into `num_workers` groups by LPT greedy: items in
/// descending cost order, each to the currently lightest group. Ties break
/// on lower index (items) and lower group id, so the grouping is
/// deterministic.
pub fn build_task_groups(item_costs: &[f64], num_workers: usize) -> Vec<Vec<usize>> {
    assert!(num_workers >= 1, "need at least one worker");
    let mut order: Vec<usize> = (0..item_costs.len()).collect();
    order.sort_by(|&a, &b| {
        item_costs[b].total_cmp(&item_costs[a]).then_with(|| a.cmp(&b))
    });
    let mut groups = vec![Vec::new(); num_workers];
    let mut loads = vec![0.0f64; num_workers];
    for idx in order {
        let mut lightest = 0;
        for g in 1..num_workers {
            if loads[g] < loads[lightest] {
                lightest = g;
            }
        }
        groups[lightest].push(idx);
        loads[lightest] += item_costs[idx];
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

/// Outcome of a calibration run: the fitted model, the raw medians per grid
/// point and method, and whether timing noise forced the default thresholds.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub model: CostModel,
    /// (nnz, [rank-one, sequential, parallel]) median seconds
    pub samples: Vec<(usize, [f64; 3])>,
    pub fell_back: bool,
}

impl CalibrationReport {
    /// Human-readable report text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "cost-model calibration").unwrap();
        writeln!(s, "  fixed_cost      {}", self.model.fixed_cost).unwrap();
        writeln!(s, "  per_rating_cost {}", self.model.per_rating_cost).unwrap();
        writeln!(s, "  rank1_threshold {}", self.model.rank1_threshold).unwrap();
        writeln!(s, "  parallel_threshold {}", self.model.parallel_threshold).unwrap();
        writeln!(s, "  fell_back       {}", self.fell_back).unwrap();
        writeln!(s, "  nnz rank1_s seq_s par_s").unwrap();
        for (nnz, t) in &self.samples {
            writeln!(s, "  {} {:.3e} {:.3e} {:.3e}", nnz, t[0], t[1], t[2]).unwrap();
        }
        s
    }
}

pub const CALIBRATION_GRID: [usize; 5] = [1, 10, 100, 1_000, 10_000];
const CALIBRATION_REPS: usize = 5;

/// Fit the cost model from injected timings. `timer(nnz, method, rep)`
/// returns one measured duration in seconds.
///
/// The (fixed, per-rating) line is least-squares fitted to the cheapest
/// method at each grid point; thresholds come from the crossings of the
/// per-method lines. If any grid point's timing spread exceeds 50% of its
/// median, thresholds fall back to the defaults.
pub fn calibrate_with_timer(
    mut timer: impl FnMut(usize, UpdateMethod, usize) -> f64,
) -> CalibrationReport {
    let methods = [UpdateMethod::RankOne, UpdateMethod::SeqCholesky, UpdateMethod::ParCholesky];
    let mut samples = Vec::with_capacity(CALIBRATION_GRID.len());
    let mut noisy = false;

    for &nnz in &CALIBRATION_GRID {
        let mut medians = [0.0f64; 3];
        for (mi, &method) in methods.iter().enumerate() {
            let mut reps: Vec<f64> =
                (0..CALIBRATION_REPS).map(|rep| timer(nnz, method, rep)).collect();
            reps.sort_by(f64::total_cmp);
            let median = reps[reps.len() / 2];
            let spread = reps[reps.len() - 1] - reps[0];
            if median <= 0.0 || spread > 0.5 * median {
                noisy = true;
            }
            medians[mi] = median.max(0.0);
        }
        samples.push((nnz, medians));
    }

    // least squares on the per-point envelope (the cost actually paid)
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(nnz, t)| (nnz as f64, t[0].min(t[1]).min(t[2])))
        .collect();
    let (c0, c1) = fit_line(&pts);
    let fixed_cost = c0.max(0.0);
    let per_rating_cost = c1.max(f64::MIN_POSITIVE);

    let (rank1_threshold, parallel_threshold, crossing_ok) = if noisy {
        (DEFAULT_RANK1_THRESHOLD, DEFAULT_PARALLEL_THRESHOLD, false)
    } else {
        let line = |mi: usize| {
            let pts: Vec<(f64, f64)> =
                samples.iter().map(|&(nnz, t)| (nnz as f64, t[mi])).collect();
            fit_line(&pts)
        };
        let (r0, r1) = line(0);
        let (s0, s1) = line(1);
        let (p0, p1) = line(2);
        let rank1_cross = crossing(r0, r1, s0, s1);
        let par_cross = crossing(s0, s1, p0, p1);
        match (rank1_cross, par_cross) {
            (Some(a), Some(b)) if a >= 1.0 => {
                let ra = a.round() as usize;
                let rb = (b.round() as usize).max(ra);
                (ra, rb, true)
            }
            _ => (DEFAULT_RANK1_THRESHOLD, DEFAULT_PARALLEL_THRESHOLD, false),
        }
    };

    CalibrationReport {
        model: CostModel { fixed_cost, per_rating_cost, rank1_threshold, parallel_threshold },
        samples,
        fell_back: noisy || !crossing_ok,
    }
}

/// Calibrate by timing real synthetic updates at latent dimension `k`.
pub fn calibrate(k: usize) -> CalibrationReport {
    use crate::sampler::{item_posterior, HyperParams, ItemScratch, LatentMatrix};
    use crate::transport::Phase;

    let max_nnz = *CALIBRATION_GRID.last().unwrap();
    let mut rng = CounterRng::new(0xca11b8, 0, Stream::Calibration, 0);
    let vectors: Vec<Vec<f64>> = (0..max_nnz).map(|_| standard_normal_vec(k, &mut rng)).collect();
    let others = LatentMatrix::from_vectors(Phase::User, k, &vectors);
    let hyper = HyperParams::from_parts(vec![0.0; k], SquareMatrix::identity(k))
        .expect("identity precision factors");
    let mut scratch = ItemScratch::new(k);

    calibrate_with_timer(move |nnz, method, _rep| {
        let ratings: Vec<(u32, f64)> = (0..nnz).map(|j| (j as u32, 1.0)).collect();
        let start = Instant::now();
        item_posterior(&others, &ratings, 0.0, &hyper, 2.0, method, &mut scratch)
            .expect("calibration posterior");
        start.elapsed().as_secs_f64()
    })
}

fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (sy / n, 0.0);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (intercept, slope)
}

/// x where line a crosses line b, if the cheaper-then-steeper shape holds.
fn crossing(a0: f64, a1: f64, b0: f64, b1: f64) -> Option<f64> {
    // a must start cheaper (a0 < b0) and grow faster (a1 > b1)
    if a0 < b0 && a1 > b1 {
        Some((b0 - a0) / (a1 - b1))
    } else {
        None
    }
}
