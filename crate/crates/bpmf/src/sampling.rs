//! Multivariate draws built on the dense kernels and the keyed generator.

use rand::Rng;
use rand_distr::{ChiSquared, StandardNormal};

use crate::linalg::{tri_solve_in_place, KernelError, SolveSide, SquareMatrix};
use crate::rng::CounterRng;

/// K independent standard-normal draws, consumed in index order.
pub fn standard_normal_vec(k: usize, rng: &mut CounterRng) -> Vec<f64> {
    (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draw from N(mean, P⁻¹) given L = chol(P) for the precision P.
///
/// Computed as mean + L⁻ᵀ z with z standard normal: cov(L⁻ᵀ z) = (L Lᵀ)⁻¹.
pub fn sample_mvn(
    mean: &[f64],
    precision_chol: &SquareMatrix,
    rng: &mut CounterRng,
) -> Result<Vec<f64>, KernelError> {
    let k = mean.len();
    debug_assert_eq!(precision_chol.order(), k);
    let mut z = standard_normal_vec(k, rng);
    tri_solve_in_place(precision_chol, &mut z, SolveSide::LowerTransposed)?;
    for (zi, mi) in z.iter_mut().zip(mean) {
        *zi += mi;
    }
    Ok(z)
}

/// Wishart draw W ~ W(df, V) given C = chol(V), by Bartlett decomposition.
///
/// A is lower triangular with A_ii ~ sqrt(χ²(df − i)) and standard-normal
/// strict lower entries; W = (C A)(C A)ᵀ with mean df·V.
pub fn sample_wishart(
    df: f64,
    scale_chol: &SquareMatrix,
    rng: &mut CounterRng,
) -> Result<SquareMatrix, KernelError> {
    Ok(sample_wishart_with_chol(df, scale_chol, rng)?.0)
}

/// As [`sample_wishart`] but also returns chol(W) = C·A, which the sampler
/// reuses instead of re-factorizing.
pub fn sample_wishart_with_chol(
    df: f64,
    scale_chol: &SquareMatrix,
    rng: &mut CounterRng,
) -> Result<(SquareMatrix, SquareMatrix), KernelError> {
    let k = scale_chol.order();
    if df < k as f64 {
        return Err(KernelError::BadDegreesOfFreedom { df, order: k });
    }
    let mut bartlett = SquareMatrix::zeros(k);
    for i in 0..k {
        for j in 0..i {
            bartlett.set(i, j, rng.sample::<f64, _>(StandardNormal));
        }
        let chi = ChiSquared::new(df - i as f64).expect("df - i > 0 by the df >= k check");
        let c: f64 = rng.sample(chi);
        bartlett.set(i, i, c.sqrt());
    }
    let factor = scale_chol.mat_mul(&bartlett);
    let w = factor.times_transpose();
    Ok((w, factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky, spd_inverse_from_chol};
    use crate::rng::Stream;

    #[test]
    fn mvn_concentrates_on_mean_at_high_precision() {
        // precision 1e8·I ≈ point mass at the mean
        let k = 3;
        let mut chol = SquareMatrix::identity(k);
        for i in 0..k {
            chol.set(i, i, 1e8);
        }
        let mean = vec![1.0, -2.0, 0.5];
        let mut rng = CounterRng::new(5, 0, Stream::Synthetic, 0);
        let x = sample_mvn(&mean, &chol, &mut rng).unwrap();
        for (xi, mi) in x.iter().zip(&mean) {
            assert!((xi - mi).abs() <= 1e-6);
        }
    }

    #[test]
    fn mvn_moment_matching() {
        // sample covariance of 1e5 draws within 5% of precision⁻¹
        let p = SquareMatrix::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let chol = cholesky(&p).unwrap();
        let cov_expect = spd_inverse_from_chol(&chol).unwrap();
        let mean = [0.7, -0.4];

        let n = 100_000;
        let mut sum = [0.0f64; 2];
        let mut scatter = [0.0f64; 4];
        for draw in 0..n {
            let mut rng = CounterRng::new(1234, 0, Stream::Synthetic, draw);
            let x = sample_mvn(&mean, &chol, &mut rng).unwrap();
            sum[0] += x[0];
            sum[1] += x[1];
            scatter[0] += x[0] * x[0];
            scatter[1] += x[0] * x[1];
            scatter[2] += x[1] * x[0];
            scatter[3] += x[1] * x[1];
        }
        let nf = n as f64;
        let xbar = [sum[0] / nf, sum[1] / nf];
        for i in 0..2 {
            assert!((xbar[i] - mean[i]).abs() < 0.02);
            for j in 0..2 {
                let sample_cov = scatter[i * 2 + j] / nf - xbar[i] * xbar[j];
                let expect = cov_expect.get(i, j);
                assert!(
                    (sample_cov - expect).abs() <= 0.05 * expect.abs().max(0.1),
                    "cov[{i}{j}] sample {sample_cov} expected {expect}"
                );
            }
        }
    }

    #[test]
    fn mvn_deterministic_replay() {
        let chol = SquareMatrix::identity(4);
        let mean = vec![0.0; 4];
        let a = sample_mvn(&mean, &chol, &mut CounterRng::new(9, 3, Stream::Synthetic, 7)).unwrap();
        let b = sample_mvn(&mean, &chol, &mut CounterRng::new(9, 3, Stream::Synthetic, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wishart_outputs_are_spd() {
        let scale_chol = cholesky(&SquareMatrix::from_rows(&[&[1.5, 0.2], &[0.2, 0.8]])).unwrap();
        for draw in 0..200 {
            let mut rng = CounterRng::new(2, 0, Stream::Synthetic, draw);
            let w = sample_wishart(4.0, &scale_chol, &mut rng).unwrap();
            cholesky(&w).expect("every Wishart draw must factor");
        }
    }

    #[test]
    fn wishart_moment_matching() {
        // element-wise mean of 1e5 draws within 5% of df·scale
        let scale = SquareMatrix::from_rows(&[&[1.0, 0.4], &[0.4, 2.0]]);
        let scale_chol = cholesky(&scale).unwrap();
        let df = 5.0;
        let n = 100_000;
        let mut acc = SquareMatrix::zeros(2);
        for draw in 0..n {
            let mut rng = CounterRng::new(77, 0, Stream::Synthetic, draw);
            let w = sample_wishart(df, &scale_chol, &mut rng).unwrap();
            acc.add_assign(&w);
        }
        acc.scale(1.0 / n as f64);
        for i in 0..2 {
            for j in 0..2 {
                let expect = df * scale.get(i, j);
                assert!(
                    (acc.get(i, j) - expect).abs() <= 0.05 * expect.abs(),
                    "mean[{i}{j}] {} expected {expect}",
                    acc.get(i, j)
                );
            }
        }
    }

    #[test]
    fn wishart_chol_factor_matches() {
        let scale_chol = cholesky(&SquareMatrix::from_rows(&[&[2.0, 0.1], &[0.1, 1.0]])).unwrap();
        let mut rng = CounterRng::new(3, 1, Stream::Synthetic, 0);
        let (w, f) = sample_wishart_with_chol(6.0, &scale_chol, &mut rng).unwrap();
        let diff: f64 = {
            let rec = f.times_transpose();
            (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (rec.get(i, j) - w.get(i, j)).abs())
                .fold(0.0, f64::max)
        };
        assert!(diff <= 1e-12);
    }

    #[test]
    fn wishart_rejects_low_df() {
        let chol = SquareMatrix::identity(3);
        let mut rng = CounterRng::new(0, 0, Stream::Synthetic, 0);
        match sample_wishart(2.5, &chol, &mut rng) {
            Err(KernelError::BadDegreesOfFreedom { .. }) => {}
            other => panic!("expected BadDegreesOfFreedom, got {other:?}"),
        }
    }

    #[test]
    fn wishart_deterministic_replay() {
        let chol = SquareMatrix::identity(3);
        let a = sample_wishart(5.0, &chol, &mut CounterRng::new(4, 2, Stream::Synthetic, 1)).unwrap();
        let b = sample_wishart(5.0, &chol, &mut CounterRng::new(4, 2, Stream::Synthetic, 1)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
