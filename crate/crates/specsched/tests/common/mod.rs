#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use specsched::estimate::synthetic_circulant_model;
use specsched::rng::CounterRng;
use specsched::simulate::DenseGaussian;
use specsched::model::{Formulation, Transfer};
use specsched::{Process, SpectralModel};

pub fn reference_model() -> (DenseGaussian, SpectralModel) {
    synthetic_circulant_model(50, 0.1, 0.05).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random symmetric positive semidefinite matrix `B B'` with `B` of size
/// `d x k` (rank at most `k`).
pub fn random_psd(rng: &mut CounterRng, d: usize, k: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, k, |_, _| rng.next_normal());
    &b * b.transpose()
}

pub fn random_vector(rng: &mut CounterRng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.next_normal())
}

pub fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn random_instance(rng: &mut CounterRng) -> (SpectralModel, Transfer) {
    let d = 1 + (rng.next_u64() % 8) as usize;
    let lam: Vec<f64> = (0..d).map(|_| 0.01 + 3.0 * rng.next_f64()).collect();
    let mu: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
    let d1: Vec<f64> = (0..d).map(|_| 0.05 + 2.0 * rng.next_f64()).collect();
    let d2: Vec<f64> = (0..d).map(|_| 2.0 * rng.next_f64()).collect();
    let ddpm = rng.next_u64().is_multiple_of(2);
    let var_extra: Vec<f64> = (0..d).map(|_| if ddpm { 0.5 * rng.next_f64() } else { 0.0 }).collect();
    let t = Transfer {
        d1,
        d2,
        var_extra,
        process: if ddpm { Process::Ddpm } else { Process::Ddim },
        formulation: Formulation::Vp,
    };
    (SpectralModel::new(lam, mu, "random").unwrap(), t)
}

/// Generated Gaussian `N(D2 mu, D1^2 + var_extra)` as dense matrices.
pub fn generated(m: &SpectralModel, t: &Transfer) -> (DVector<f64>, DMatrix<f64>) {
    let mean = DVector::from_iterator(m.dim, m.mean_spectral.iter().zip(&t.d2).map(|(a, b)| a * b));
    let var = DVector::from_iterator(m.dim, t.d1.iter().zip(&t.var_extra).map(|(g, v)| g * g + v));
    (mean, DMatrix::from_diagonal(&var))
}

/// Textbook KL between multivariate Gaussians, `KL(N0 || N1)`.
pub fn kl_oracle(m0: &DVector<f64>, s0: &DMatrix<f64>, m1: &DVector<f64>, s1: &DMatrix<f64>) -> f64 {
    let k = m0.len() as f64;
    let inv1 = s1.clone().try_inverse().unwrap();
    let dm = m1 - m0;
    0.5 * ((&inv1 * s0).trace() + (dm.transpose() * &inv1 * &dm)[0] - k + (s1.determinant() / s0.determinant()).ln())
}

/// Squared W2 for commuting covariances: mean term plus squared distance
/// between matrix square roots.
pub fn w2_oracle(m0: &DVector<f64>, s0: &DMatrix<f64>, m1: &DVector<f64>, s1: &DMatrix<f64>) -> f64 {
    let r0 = s0.map_diagonal(f64::sqrt);
    let r1 = s1.map_diagonal(f64::sqrt);
    (m0 - m1).norm_squared() + (r0 - r1).norm_squared()
}

/// Least-squares fit of a linear matrix family `sum_p c_p B_p` to `target`
/// in Frobenius norm, solved generically via SVD.
pub fn frobenius_fit(basis: &[DMatrix<f64>], target: &DMatrix<f64>) -> Vec<f64> {
    let n2 = target.len();
    let design = DMatrix::from_fn(n2, basis.len(), |r, p| basis[p].as_slice()[r]);
    let rhs = DVector::from_column_slice(target.as_slice());
    let sol = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
    sol.as_slice().to_vec()
}

pub fn toeplitz_from_row(row: &[f64]) -> DMatrix<f64> {
    let n = row.len();
    DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)])
}
