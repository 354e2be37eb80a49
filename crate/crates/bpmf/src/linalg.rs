//! Dense kernels at latent-dimension scale (K×K matrices, K-vectors).
//!
//! Everything here is sequential, allocation-light and deterministic. The
//! factor-based formulation (Cholesky plus triangular solves) replaces every
//! explicit matrix inverse in the sampler.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    /// A Cholesky pivot was not strictly positive: the matrix is not SPD.
    #[error("matrix not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    /// Zero on a triangular factor's diagonal.
    #[error("singular triangular factor (zero diagonal at index {index})")]
    SingularFactor { index: usize },
    /// Wishart degrees of freedom below the matrix order.
    #[error("degrees of freedom {df} below matrix order {order}")]
    BadDegreesOfFreedom { df: f64, order: usize },
}

/// Dense K×K matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(order: usize) -> Self {
        SquareMatrix { order, data: vec![0.0; order * order] }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.data[i * order + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let order = rows.len();
        let mut data = Vec::with_capacity(order * order);
        for r in rows {
            assert_eq!(r.len(), order, "row length must equal order");
            data.extend_from_slice(r);
        }
        SquareMatrix { order, data }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.order + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.order..(i + 1) * self.order]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_vec(order: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), order * order);
        SquareMatrix { order, data }
    }

    /// self += w · x xᵀ
    pub fn add_outer(&mut self, x: &[f64], w: f64) {
        let k = self.order;
        debug_assert_eq!(x.len(), k);
        for i in 0..k {
            let wxi = w * x[i];
            let row = &mut self.data[i * k..(i + 1) * k];
            for (cell, &xj) in row.iter_mut().zip(x) {
                *cell += wxi * xj;
            }
        }
    }

    pub fn add_assign(&mut self, other: &SquareMatrix) {
        debug_assert_eq!(self.order, other.order);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// y = self · x
    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        let k = self.order;
        debug_assert_eq!(x.len(), k);
        (0..k)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// self · otherᵀ-free product, returns self · other.
    pub fn mat_mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let k = self.order;
        debug_assert_eq!(k, other.order);
        let mut out = SquareMatrix::zeros(k);
        for i in 0..k {
            for l in 0..k {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                for j in 0..k {
                    out.data[i * k + j] += a * other.get(l, j);
                }
            }
        }
        out
    }

    /// self · selfᵀ, the reconstruction of a Cholesky factor.
    pub fn times_transpose(&self) -> SquareMatrix {
        let k = self.order;
        let mut out = SquareMatrix::zeros(k);
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for l in 0..=i.min(j) {
                    s += self.get(i, l) * self.get(j, l);
                }
                out.data[i * k + j] = s;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Which triangular system to solve against a lower factor L.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveSide {
    /// L y = b (forward substitution)
    Lower,
    /// Lᵀ y = b (backward substitution)
    LowerTransposed,
}

/// Cholesky factorization A = L Lᵀ with L lower triangular.
///
/// The input is symmetrized as (A + Aᵀ)/2 while copying; accumulated outer
/// products drift off symmetric by a few ulps. A non-positive pivot reports
/// the degenerate index.
pub fn cholesky(a: &SquareMatrix) -> Result<SquareMatrix, KernelError> {
    let k = a.order;
    let mut l = SquareMatrix::zeros(k);
    // lower triangle of the symmetrized input
    for i in 0..k {
        for j in 0..=i {
            l.data[i * k + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    factor_lower_in_place(&mut l)?;
    Ok(l)
}

/// In-place factorization of a matrix whose lower triangle holds the input.
fn factor_lower_in_place(l: &mut SquareMatrix) -> Result<(), KernelError> {
    let k = l.order;
    for j in 0..k {
        let mut pivot = l.data[j * k + j];
        for p in 0..j {
            pivot -= l.data[j * k + p] * l.data[j * k + p];
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(KernelError::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l.data[j * k + j] = ljj;
        let inv = 1.0 / ljj;
        for i in (j + 1)..k {
            let mut s = l.data[i * k + j];
            for p in 0..j {
                s -= l.data[i * k + p] * l.data[j * k + p];
            }
            l.data[i * k + j] = s * inv;
        }
    }
    Ok(())
}

/// Rank-one update of a Cholesky factor: returns chol(L Lᵀ + x xᵀ).
///
/// O(K²) against O(K³) for a fresh factorization; adding x xᵀ preserves
/// positive definiteness, so this cannot fail on a valid factor.
pub fn chol_rank1_update(l: &SquareMatrix, x: &[f64]) -> SquareMatrix {
    let mut out = l.clone();
    let mut w = x.to_vec();
    chol_rank1_update_in_place(&mut out, &mut w);
    out
}

/// In-place variant; `w` enters holding x and is consumed as scratch.
pub fn chol_rank1_update_in_place(l: &mut SquareMatrix, w: &mut [f64]) {
    let k = l.order;
    debug_assert_eq!(w.len(), k);
    let mut b = 1.0;
    for j in 0..k {
        let ljj = l.data[j * k + j];
        let ljj2 = ljj * ljj;
        let wj = w[j];
        let wj2 = wj * wj;
        let new_ljj = (ljj2 + wj2 / b).sqrt();
        let gamma = ljj2 * b + wj2;
        for i in (j + 1)..k {
            let lij = l.data[i * k + j];
            let wi = w[i] - wj * lij / ljj;
            l.data[i * k + j] = new_ljj * (lij / ljj + wj * wi / gamma);
            w[i] = wi;
        }
        b += wj2 / ljj2;
        l.data[j * k + j] = new_ljj;
    }
}

/// Solve L y = b or Lᵀ y = b for a lower-triangular factor L.
pub fn tri_solve(l: &SquareMatrix, b: &[f64], side: SolveSide) -> Result<Vec<f64>, KernelError> {
    let mut y = b.to_vec();
    tri_solve_in_place(l, &mut y, side)?;
    Ok(y)
}

/// In-place solve; `y` enters holding b.
pub fn tri_solve_in_place(
    l: &SquareMatrix,
    y: &mut [f64],
    side: SolveSide,
) -> Result<(), KernelError> {
    let k = l.order;
    debug_assert_eq!(y.len(), k);
    for i in 0..k {
        if l.data[i * k + i] == 0.0 {
            return Err(KernelError::SingularFactor { index: i });
        }
    }
    match side {
        SolveSide::Lower => {
            for i in 0..k {
                let mut s = y[i];
                for j in 0..i {
                    s -= l.data[i * k + j] * y[j];
                }
                y[i] = s / l.data[i * k + i];
            }
        }
        SolveSide::LowerTransposed => {
            for i in (0..k).rev() {
                let mut s = y[i];
                for j in (i + 1)..k {
                    s -= l.data[j * k + i] * y[j];
                }
                y[i] = s / l.data[i * k + i];
            }
        }
    }
    Ok(())
}

/// Inverse of an SPD matrix from its Cholesky factor, via K solves.
pub fn spd_inverse_from_chol(l: &SquareMatrix) -> Result<SquareMatrix, KernelError> {
    let k = l.order;
    let mut inv = SquareMatrix::zeros(k);
    let mut col = vec![0.0; k];
    for j in 0..k {
        col.fill(0.0);
        col[j] = 1.0;
        tri_solve_in_place(l, &mut col, SolveSide::Lower)?;
        tri_solve_in_place(l, &mut col, SolveSide::LowerTransposed)?;
        for i in 0..k {
            inv.data[i * k + j] = col[i];
        }
    }
    Ok(inv)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += w · x
pub fn axpy(w: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += w * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, Stream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_spd(k: usize, rng: &mut CounterRng) -> SquareMatrix {
        // B Bᵀ + k·I is comfortably positive definite
        let mut b = SquareMatrix::zeros(k);
        for i in 0..k {
            for j in 0..k {
                b.set(i, j, rng.sample::<f64, _>(StandardNormal));
            }
        }
        let mut a = b.mat_mul(&transpose(&b));
        for i in 0..k {
            a.set(i, i, a.get(i, i) + k as f64);
        }
        a
    }

    fn transpose(m: &SquareMatrix) -> SquareMatrix {
        let k = m.order();
        let mut t = SquareMatrix::zeros(k);
        for i in 0..k {
            for j in 0..k {
                t.set(j, i, m.get(i, j));
            }
        }
        t
    }

    fn rel_frob_diff(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
        let k = a.order();
        let mut d = SquareMatrix::zeros(k);
        for i in 0..k {
            for j in 0..k {
                d.set(i, j, a.get(i, j) - b.get(i, j));
            }
        }
        d.frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&SquareMatrix::identity(3)).unwrap();
        assert_eq!(l, SquareMatrix::identity(3));
    }

    #[test]
    fn cholesky_reconstructs_small_case() {
        let a = SquareMatrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let l = cholesky(&a).unwrap();
        assert!(rel_frob_diff(&l.times_transpose(), &a) <= 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SquareMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky(&a) {
            Err(KernelError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_reconstruction_oracle_random() {
        for (t, &k) in [2usize, 5, 16, 64].iter().enumerate() {
            let mut rng = CounterRng::new(100 + t as u64, 0, Stream::Synthetic, k as u64);
            let a = random_spd(k, &mut rng);
            let l = cholesky(&a).unwrap();
            assert!(
                rel_frob_diff(&l.times_transpose(), &a) <= 1e-10,
                "k={k}"
            );
        }
    }

    #[test]
    fn rank1_zero_update_is_identity() {
        let l = chol_rank1_update(&SquareMatrix::identity(2), &[0.0, 0.0]);
        assert_eq!(l, SquareMatrix::identity(2));
    }

    #[test]
    fn rank1_matches_full_factorization() {
        // full-decomposition oracle: 1000 (A, x) pairs across sizes
        for &k in &[2usize, 8, 32] {
            for trial in 0..334 {
                let mut rng = CounterRng::new(7, trial, Stream::Synthetic, k as u64);
                let a = random_spd(k, &mut rng);
                let x: Vec<f64> =
                    (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let updated = chol_rank1_update(&cholesky(&a).unwrap(), &x);
                let mut a_plus = a.clone();
                a_plus.add_outer(&x, 1.0);
                let full = cholesky(&a_plus).unwrap();
                assert!(
                    rel_frob_diff(&updated, &full) <= 1e-8,
                    "k={k} trial={trial}"
                );
            }
        }
    }

    #[test]
    fn rank1_unit_basis_closed_form() {
        // n updates with unit basis vectors from I give chol(I + diag(counts))
        let k = 4;
        let counts = [3usize, 0, 2, 5];
        let mut l = SquareMatrix::identity(k);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                let mut w = e;
                chol_rank1_update_in_place(&mut l, &mut w);
            }
        }
        for i in 0..k {
            let expect = (1.0 + counts[i] as f64).sqrt();
            assert!((l.get(i, i) - expect).abs() <= 1e-12);
            for j in 0..i {
                assert_eq!(l.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn tri_solve_identity_and_diagonal() {
        let b = [3.0, -1.0, 2.0];
        let y = tri_solve(&SquareMatrix::identity(3), &b, SolveSide::Lower).unwrap();
        assert_eq!(y, b.to_vec());

        let d = SquareMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let y = tri_solve(&d, &[2.0, 4.0], SolveSide::Lower).unwrap();
        assert_eq!(y, vec![1.0, 1.0]);
    }

    #[test]
    fn tri_solve_residual_oracle() {
        let k = 12;
        let mut rng = CounterRng::new(11, 0, Stream::Synthetic, 0);
        let l = cholesky(&random_spd(k, &mut rng)).unwrap();
        let b: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

        for side in [SolveSide::Lower, SolveSide::LowerTransposed] {
            let y = tri_solve(&l, &b, side).unwrap();
            // residual ‖Ly − b‖ / ‖b‖
            let mut resid = 0.0f64;
            for i in 0..k {
                let mut s = 0.0;
                for j in 0..k {
                    let lij = match side {
                        SolveSide::Lower => l.get(i, j),
                        SolveSide::LowerTransposed => l.get(j, i),
                    };
                    s += lij * y[j];
                }
                resid += (s - b[i]) * (s - b[i]);
            }
            let bn = dot(&b, &b).sqrt();
            assert!(resid.sqrt() / bn <= 1e-12);
        }
    }

    #[test]
    fn tri_solve_reports_singular() {
        let mut l = SquareMatrix::identity(2);
        l.set(1, 1, 0.0);
        match tri_solve(&l, &[1.0, 1.0], SolveSide::Lower) {
            Err(KernelError::SingularFactor { index: 1 }) => {}
            other => panic!("expected SingularFactor, got {other:?}"),
        }
    }

    #[test]
    fn spd_inverse_multiplies_to_identity() {
        let k = 6;
        let mut rng = CounterRng::new(21, 0, Stream::Synthetic, 0);
        let a = random_spd(k, &mut rng);
        let inv = spd_inverse_from_chol(&cholesky(&a).unwrap()).unwrap();
        let prod = a.mat_mul(&inv);
        assert!(rel_frob_diff(&prod, &SquareMatrix::identity(k)) <= 1e-10);
    }
}
