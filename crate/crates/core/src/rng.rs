//! Seeded randomness. Every randomized routine takes a `u64` seed and draws
//! from a ChaCha stream, so outputs are reproducible across platforms.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ops::{self, ComplexMatrix, C64};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed; used to give sub-tasks their own stream.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn ginibre(rng: &mut SeededRng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| C64::new(normal(rng), normal(rng)))
}

/// Haar-random unit vector in `C^dim`.
pub fn haar_state(rng: &mut SeededRng, dim: usize) -> DVector<C64> {
    let v = DVector::from_fn(dim, |_, _| C64::new(normal(rng), normal(rng)));
    let n = v.norm();
    v.unscale(n)
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn haar_unitary(rng: &mut SeededRng, dim: usize) -> ComplexMatrix {
    let g = ginibre(rng, dim, dim);
    let qr = g.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..dim {
        let d = rr[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Random PSD matrix `G G†` (full rank almost surely).
pub fn random_psd(rng: &mut SeededRng, dim: usize) -> ComplexMatrix {
    let g = ginibre(rng, dim, dim);
    &g * g.adjoint()
}

/// Random Hermitian matrix with eigenvalues drawn uniformly from `[lo, hi]`.
pub fn random_spectrum(rng: &mut SeededRng, dim: usize, lo: f64, hi: f64) -> ComplexMatrix {
    let u = haar_unitary(rng, dim);
    let values: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
    &u * ops::diag(&values) * u.adjoint()
}

/// Random decomposition `I = Σ T_i` into `parts` positive-definite pieces,
/// obtained by symmetric normalization of random PSD matrices.
pub fn random_partition_of_identity(
    rng: &mut SeededRng,
    dim: usize,
    parts: usize,
) -> Vec<ComplexMatrix> {
    let raw: Vec<ComplexMatrix> = (0..parts).map(|_| random_psd(rng, dim)).collect();
    let sum = raw
        .iter()
        .fold(ops::zeros(dim, dim), |acc, t| acc + t);
    let inv_sqrt = ops::hermitian_fn(&sum, |v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    raw.iter()
        .map(|t| ops::hermitian_part(&(&inv_sqrt * t * &inv_sqrt)))
        .collect()
}

/// Random probability vector with strictly positive entries.
pub fn random_simplex(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_sums_to_identity() {
        let mut rng = seeded(3);
        let parts = random_partition_of_identity(&mut rng, 3, 4);
        let sum = parts.iter().fold(ops::zeros(3, 3), |a, t| a + t);
        assert!(ops::max_abs_diff(&sum, &ops::identity(3)) < 1e-12);
        for t in &parts {
            assert!(ops::min_eigenvalue(t) > 0.0);
        }
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = seeded(9);
        let u = haar_unitary(&mut rng, 4);
        assert!(ops::max_abs_diff(&(u.adjoint() * &u), &ops::identity(4)) < 1e-12);
    }

    #[test]
    fn same_seed_same_stream() {
        let a = ginibre(&mut seeded(1), 2, 2);
        let b = ginibre(&mut seeded(1), 2, 2);
        assert_eq!(a, b);
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
    }
}
