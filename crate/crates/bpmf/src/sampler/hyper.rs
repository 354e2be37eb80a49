//! Normal-Wishart conditional for the per-side hyperparameters.
//!
//! Given n item vectors with sum s and scatter Q = Σ x xᵀ, the posterior of
//! (μ, Λ) under the N(μ₀, (β₀Λ)⁻¹) × W(ν₀, W₀) prior is Normal-Wishart with
//!
//!   β* = β₀ + n        ν* = ν₀ + n        μ* = (β₀ μ₀ + s) / β*
//!   W*⁻¹ = W₀⁻¹ + (Q − s sᵀ/n) + (β₀ n / β*) (x̄ − μ₀)(x̄ − μ₀)ᵀ
//!
//! and the draw is Λ ~ W(ν*, W*), μ | Λ ~ N(μ*, (β* Λ)⁻¹).

use crate::linalg::{cholesky, spd_inverse_from_chol, KernelError, SquareMatrix};
use crate::rng::CounterRng;
use crate::sampling::{sample_mvn, sample_wishart_with_chol};

use super::{HyperParams, LatentMatrix, NwPrior};

/// Posterior parameters of the Normal-Wishart conditional.
#[derive(Debug, Clone)]
pub struct NwPosterior {
    pub beta: f64,
    pub nu: f64,
    pub mean: Vec<f64>,
    pub scale: SquareMatrix,
    pub scale_chol: SquareMatrix,
}

/// Compute the posterior parameters from fused aggregates.
pub fn nw_posterior(
    count: usize,
    agg_sum: &[f64],
    agg_scatter: &SquareMatrix,
    prior: &NwPrior,
) -> Result<NwPosterior, KernelError> {
    let k = prior.mu0.len();
    debug_assert_eq!(agg_sum.len(), k);
    let n = count as f64;
    let beta = prior.beta0 + n;
    let nu = prior.nu0 + n;

    if count == 0 {
        // no data: the posterior is the prior itself
        let scale = prior.w0.clone();
        let scale_chol = cholesky(&scale)?;
        return Ok(NwPosterior { beta, nu, mean: prior.mu0.clone(), scale, scale_chol });
    }

    let mean: Vec<f64> = prior
        .mu0
        .iter()
        .zip(agg_sum)
        .map(|(m0, s)| (prior.beta0 * m0 + s) / beta)
        .collect();

    // W*⁻¹ accumulation
    let mut winv = spd_inverse_from_chol(&cholesky(&prior.w0)?)?;
    // n·S = Q − s sᵀ / n
    winv.add_assign(agg_scatter);
    winv.add_outer(agg_sum, -1.0 / n);
    // (β₀ n / β*) (x̄ − μ₀)(x̄ − μ₀)ᵀ
    let diff: Vec<f64> = agg_sum.iter().zip(&prior.mu0).map(|(s, m0)| s / n - m0).collect();
    winv.add_outer(&diff, prior.beta0 * n / beta);

    let scale = spd_inverse_from_chol(&cholesky(&winv)?)?;
    let scale_chol = cholesky(&scale)?;
    Ok(NwPosterior { beta, nu, mean, scale, scale_chol })
}

/// Draw (μ, Λ) from the posterior given fused aggregates.
pub fn sample_hyper_from_aggregates(
    count: usize,
    agg_sum: &[f64],
    agg_scatter: &SquareMatrix,
    prior: &NwPrior,
    rng: &mut CounterRng,
) -> Result<HyperParams, KernelError> {
    let post = nw_posterior(count, agg_sum, agg_scatter, prior)?;
    let (lambda, lambda_chol) = sample_wishart_with_chol(post.nu, &post.scale_chol, rng)?;
    // μ | Λ ~ N(μ*, (β*Λ)⁻¹); chol(β*Λ) = sqrt(β*)·chol(Λ)
    let mut mu_prec_chol = lambda_chol.clone();
    mu_prec_chol.scale(post.beta.sqrt());
    let mu = sample_mvn(&post.mean, &mu_prec_chol, rng)?;
    Ok(HyperParams::from_draw(mu, lambda, lambda_chol))
}

/// Draw hyperparameters for one side of the model.
pub fn sample_hyper(
    side: &LatentMatrix,
    prior: &NwPrior,
    rng: &mut CounterRng,
) -> Result<HyperParams, KernelError> {
    sample_hyper_from_aggregates(side.rows(), side.agg_sum(), side.agg_scatter(), prior, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::sampling::standard_normal_vec;
    use crate::transport::Phase;

    /// Independent posterior computation from raw vectors: plain loops, no
    /// fused aggregates, explicit S.
    pub(crate) fn nw_posterior_oracle(
        vectors: &[Vec<f64>],
        prior: &NwPrior,
    ) -> (f64, f64, Vec<f64>, SquareMatrix) {
        let k = prior.mu0.len();
        let n = vectors.len() as f64;
        let beta = prior.beta0 + n;
        let nu = prior.nu0 + n;
        let mut xbar = vec![0.0; k];
        for v in vectors {
            for (a, b) in xbar.iter_mut().zip(v) {
                *a += b;
            }
        }
        for a in &mut xbar {
            *a /= n;
        }
        let mean: Vec<f64> = prior
            .mu0
            .iter()
            .zip(&xbar)
            .map(|(m0, xb)| (prior.beta0 * m0 + n * xb) / beta)
            .collect();
        // S = (1/n) Σ (x−x̄)(x−x̄)ᵀ
        let mut s = SquareMatrix::zeros(k);
        for v in vectors {
            let d: Vec<f64> = v.iter().zip(&xbar).map(|(a, b)| a - b).collect();
            s.add_outer(&d, 1.0);
        }
        s.scale(1.0 / n);
        let mut winv = spd_inverse_from_chol(&cholesky(&prior.w0).unwrap()).unwrap();
        let mut ns = s.clone();
        ns.scale(n);
        winv.add_assign(&ns);
        let d: Vec<f64> = xbar.iter().zip(&prior.mu0).map(|(a, b)| a - b).collect();
        winv.add_outer(&d, prior.beta0 * n / beta);
        let scale = spd_inverse_from_chol(&cholesky(&winv).unwrap()).unwrap();
        (beta, nu, mean, scale)
    }

    fn max_rel_diff(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
        let k = a.order();
        let norm = b.max_abs().max(1e-300);
        (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| (a.get(i, j) - b.get(i, j)).abs() / norm)
            .fold(0.0, f64::max)
    }

    #[test]
    fn empty_side_draws_from_prior() {
        let prior = NwPrior::uninformative(3);
        let post = nw_posterior(0, &[0.0; 3], &SquareMatrix::zeros(3), &prior).unwrap();
        assert_eq!(post.beta, prior.beta0);
        assert_eq!(post.nu, prior.nu0);
        assert_eq!(post.mean, prior.mu0);
        assert_eq!(post.scale, prior.w0);
    }

    #[test]
    fn posterior_matches_raw_vector_oracle() {
        let k = 3;
        let prior = NwPrior {
            mu0: vec![0.3, -0.1, 0.5],
            beta0: 2.5,
            nu0: 4.0,
            w0: SquareMatrix::from_rows(&[
                &[1.5, 0.2, 0.0],
                &[0.2, 1.0, -0.1],
                &[0.0, -0.1, 0.8],
            ]),
        };
        for trial in 0..20 {
            let mut rng = CounterRng::new(50 + trial, 0, Stream::Synthetic, 0);
            let n = 3 + (trial as usize % 10);
            let vectors: Vec<Vec<f64>> =
                (0..n).map(|_| standard_normal_vec(k, &mut rng)).collect();
            let side = LatentMatrix::from_vectors(Phase::User, k, &vectors);
            let post =
                nw_posterior(side.rows(), side.agg_sum(), side.agg_scatter(), &prior).unwrap();
            let (beta, nu, mean, scale) = nw_posterior_oracle(&vectors, &prior);
            assert_eq!(post.beta, beta);
            assert_eq!(post.nu, nu);
            for (a, b) in post.mean.iter().zip(&mean) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "trial {trial}");
            }
            assert!(max_rel_diff(&post.scale, &scale) <= 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn posterior_mean_concentrates_on_sample_mean() {
        // 1e4 vectors from N(m, C): posterior mean of μ within 2% of m
        let k = 2;
        let m_true = [1.2, -0.7];
        let mut vectors = Vec::with_capacity(10_000);
        for i in 0..10_000u64 {
            let mut rng = CounterRng::new(4242, 0, Stream::Synthetic, i);
            let z = standard_normal_vec(k, &mut rng);
            // C = diag(0.25, 0.04)
            vectors.push(vec![m_true[0] + 0.5 * z[0], m_true[1] + 0.2 * z[1]]);
        }
        let side = LatentMatrix::from_vectors(Phase::User, k, &vectors);
        let prior = NwPrior::uninformative(k);

        let mut mu_mean = vec![0.0; k];
        let draws = 200;
        for d in 0..draws {
            let mut rng = CounterRng::new(7, d, Stream::HyperUser, 0);
            let h = sample_hyper(&side, &prior, &mut rng).unwrap();
            for (a, b) in mu_mean.iter_mut().zip(&h.mu) {
                *a += b;
            }
        }
        for v in &mut mu_mean {
            *v /= draws as f64;
        }
        for (est, truth) in mu_mean.iter().zip(&m_true) {
            assert!(
                (est - truth).abs() <= 0.02 * truth.abs(),
                "estimate {est} vs true {truth}"
            );
        }
    }

    #[test]
    fn hyper_draw_deterministic() {
        let side = LatentMatrix::init(Phase::Movie, 40, 4, 11);
        let prior = NwPrior::uninformative(4);
        let a =
            sample_hyper(&side, &prior, &mut CounterRng::new(3, 5, Stream::HyperMovie, 0)).unwrap();
        let b =
            sample_hyper(&side, &prior, &mut CounterRng::new(3, 5, Stream::HyperMovie, 0)).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.lambda.as_slice(), b.lambda.as_slice());
    }

    #[test]
    fn lambda_chol_consistent() {
        let side = LatentMatrix::init(Phase::User, 25, 3, 2);
        let prior = NwPrior::uninformative(3);
        let h =
            sample_hyper(&side, &prior, &mut CounterRng::new(1, 0, Stream::HyperUser, 0)).unwrap();
        let rec = h.lambda_chol.times_transpose();
        assert!(max_rel_diff(&rec, &h.lambda) <= 1e-10);
        // lambda_mu cache
        let lm = h.lambda.mat_vec(&h.mu);
        for (a, b) in h.lambda_mu.iter().zip(&lm) {
            assert_eq!(a, b);
        }
    }
}
