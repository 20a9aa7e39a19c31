mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use specsched::estimate::*;
use specsched::rng::CounterRng;
use specsched::simulate::empirical_moments;

#[test]
fn toeplitz_average_is_the_frobenius_projection() {
    let mut rng = CounterRng::new(3, 0);
    let n = 5;
    let a = DMatrix::from_fn(n, n, |_, _| rng.next_normal());
    let sym = (&a + a.transpose()) * 0.5;
    let basis: Vec<DMatrix<f64>> =
        (0..n).map(|k| DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == k { 1.0 } else { 0.0 })).collect();
    let want = frobenius_fit(&basis, &sym);
    assert!(max_abs_diff(&toeplitz_average(&sym), &want) < 1e-12);
    let row = [4.0, 1.5, -0.5, 0.25, 0.0];
    assert_eq!(toeplitz_average(&toeplitz_from_row(&row)), row.to_vec());
}

#[test]
fn circulant_projection_is_the_frobenius_projection_of_the_toeplitz_matrix() {
    let mut rng = CounterRng::new(4, 0);
    for n in 1..=8 {
        let row: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let basis: Vec<DMatrix<f64>> =
            (0..n).map(|k| DMatrix::from_fn(n, n, |i, j| if (j + n - i) % n == k { 1.0 } else { 0.0 })).collect();
        let want = frobenius_fit(&basis, &toeplitz_from_row(&row));
        let got = circulant_projection(&row, n).unwrap();
        assert!(max_abs_diff(&got, &want) < 1e-12, "n = {n}");
        assert_eq!(got[0], row[0]);
    }
}

#[test]
fn circulant_projection_per_lag_objective() {
    // Minimize (x - b_k)^2 (n - k) + (x - b_{n-k})^2 k by scanning a fine grid
    // and refining with the parabola through the three best points.
    let row = [1.0, 0.3, -0.7, 2.2];
    let n = 4;
    let got = circulant_projection(&row, n).unwrap();
    for k in 1..n {
        let f = |x: f64| (x - row[k]).powi(2) * (n - k) as f64 + (x - row[n - k]).powi(2) * k as f64;
        let (x0, x1, x2) = (got[k] - 0.5, got[k], got[k] + 0.5);
        let vertex = x1 - 0.5 * ((x1 - x0).powi(2) * (f(x1) - f(x2)) - (x1 - x2).powi(2) * (f(x1) - f(x0)))
            / ((x1 - x0) * (f(x1) - f(x2)) - (x1 - x2) * (f(x1) - f(x0)));
        assert!((vertex - got[k]).abs() < 1e-12);
        assert!(f(got[k]) <= f(got[k] + 1e-6) && f(got[k]) <= f(got[k] - 1e-6));
    }
    let sym = [2.0, 0.5, -1.0, 0.5];
    assert_eq!(circulant_projection(&sym, 4).unwrap(), sym.to_vec());
}

#[test]
fn synthetic_model_dft_and_dense_eigenvalues_agree() {
    let (dense, model) = reference_model();
    let (vals, _) = symmetric_eigen(&dense.covariance).unwrap();
    let dft = sorted_desc(model.eigenvalues.clone());
    assert!(max_abs_diff(&vals, &dft) < 1e-10);
    assert_eq!(dense.covariance, dense.covariance.transpose());
    assert!(dense.mean.iter().all(|&m| m == 0.05));
}

#[test]
fn symmetric_path_on_synthetic_covariance_matches_dft_path() {
    let (dense, _) = reference_model();
    let est = CovarianceEstimate { mean: dense.mean.clone(), covariance: dense.covariance.clone(), windows_used: 1, windows_rejected: 0 };
    let sym = spectral_model_from_covariance(&est, Structure::Symmetric).unwrap().model;
    let circ = spectral_model_from_covariance(&est, Structure::Circulant).unwrap().model;
    let a = sorted_desc(sym.eigenvalues.clone());
    let b = sorted_desc(circ.eigenvalues.clone());
    assert!(max_abs_diff(&a, &b) < 1e-10);
    let trace = dense.covariance.trace();
    assert!((sym.eigenvalues.iter().sum::<f64>() - trace).abs() <= 1e-8 * trace);
    // The constant mean lives entirely on the DC component in both bases.
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm(&sym.mean_spectral) - norm(&circ.mean_spectral)).abs() < 1e-12);
}

#[test]
fn circulant_input_gives_dft_eigenvalues() {
    let row = [3.0, 1.0, 0.25, 1.0];
    let c = circulant_matrix(&row);
    let est = CovarianceEstimate { mean: DVector::zeros(4), covariance: c.clone(), windows_used: 1, windows_rejected: 0 };
    let fit = spectral_model_from_covariance(&est, Structure::Circulant).unwrap();
    let dft: Vec<f64> = dft(&row).iter().map(|z| z.re).collect();
    assert!(max_abs_diff(&fit.model.eigenvalues, &dft) < 1e-14);
    let (vals, _) = symmetric_eigen(&c).unwrap();
    assert!(max_abs_diff(&vals, &sorted_desc(dft)) < 1e-12);
}

#[test]
fn sliding_window_recovers_known_covariance() {
    let d = 16;
    let windows = 100_000;
    let mut rng = CounterRng::new(99, 0);
    let b = DMatrix::from_fn(d, d, |_, _| rng.next_normal() / 4.0);
    let truth = &b * b.transpose();
    let chol = truth.clone().cholesky().unwrap();
    let mean = DVector::from_fn(d, |i, _| 0.1 * i as f64);
    let mut signal = Vec::with_capacity(d * windows);
    for w in 0..windows {
        let mut r = CounterRng::new(100, w as u64);
        let z = DVector::from_fn(d, |_, _| r.next_normal());
        signal.extend((chol.l() * z + &mean).iter());
    }
    let cfg = EstimationConfig { silence_threshold: 0.0, structure: Structure::Symmetric, ..EstimationConfig::new(d) };
    let est = sliding_window_covariance(&signal, &cfg).unwrap();
    assert_eq!(est.windows_used, windows);
    assert!((est.covariance - &truth).amax() < 0.02);
    assert!((est.mean - mean).amax() < 0.02);
}

#[test]
fn window_counts_add_up() {
    let mut sig = vec![0.0; 40];
    sig.extend((0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
    let cfg = EstimationConfig { stride: 3, ..EstimationConfig::new(8) };
    let est = sliding_window_covariance(&sig, &cfg).unwrap();
    assert_eq!(est.windows_used + est.windows_rejected, (sig.len() - 8) / 3 + 1);
    assert!(est.windows_rejected > 0 && est.windows_used > 0);
    assert!(sliding_window_covariance(&[0.0; 64], &EstimationConfig::new(8)).is_err());
}

#[test]
fn standard_normal_moments() {
    let n = 100_000;
    let d = 4;
    let samples = DMatrix::from_fn(n, d, |i, j| CounterRng::new(8, (i * d + j) as u64).next_normal());
    let m = empirical_moments(&samples).unwrap();
    assert!((m.covariance - DMatrix::<f64>::identity(d, d)).amax() < 0.02);
    assert!(m.mean.amax() < 4.0 / (n as f64).sqrt());
}

#[test]
fn pca_truncation_identity_and_top_one() {
    let (_, m) = reference_model();
    let full = pca_truncate(&m, m.dim).unwrap();
    assert_eq!(full.eigenvalues, sorted_desc(m.eigenvalues.clone()));
    let mut pairs: Vec<(f64, f64)> = m.eigenvalues.iter().copied().zip(m.mean_spectral.iter().copied()).collect();
    let mut back: Vec<(f64, f64)> = full.eigenvalues.iter().copied().zip(full.mean_spectral.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    back.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    assert_eq!(pairs, back);
    assert!(pca_truncate(&m, 0).is_err() && pca_truncate(&m, 51).is_err());
}
