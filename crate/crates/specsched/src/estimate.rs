//! Building spectral models from data or from the synthetic circulant
//! construction.

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::SpectralModel;
use crate::simulate::DenseGaussian;

/// Circulant matrix with `row` as first row: `C[i][j] = row[(j - i) mod n]`.
pub fn circulant_matrix(row: &[f64]) -> DMatrix<f64> {
    let n = row.len();
    DMatrix::from_fn(n, n, |i, j| row[(j + n - i) % n])
}

/// DFT of `row` (forward transform, unnormalized).
pub fn dft(row: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = row.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Eigenvalues of a symmetric circulant matrix, in DFT order.
pub fn circulant_eigenvalues(row: &[f64]) -> Vec<f64> {
    dft(row).iter().map(|c| c.re).collect()
}

/// Real orthonormal eigenbasis shared by all symmetric circulant matrices
/// of size `n`, as columns in DFT order: column 0 is constant, columns `k`
/// and `n - k` hold the cosine and sine of frequency `k`, and for even `n`
/// column `n / 2` alternates in sign.
pub fn real_fourier_basis(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |j, k| {
        let jf = j as f64;
        if k == 0 {
            1.0 / nf.sqrt()
        } else if 2 * k == n {
            (if j % 2 == 0 { 1.0 } else { -1.0 }) / nf.sqrt()
        } else if 2 * k < n {
            (2.0 / nf).sqrt() * (std::f64::consts::TAU * (k as f64) * jf / nf).cos()
        } else {
            (2.0 / nf).sqrt() * (std::f64::consts::TAU * ((n - k) as f64) * jf / nf).sin()
        }
    })
}

/// Gaussian `N(mu 1, A'A)` where `A` is circulant with first row
/// `linspace(-l, l, d)`, in both dense and spectral form.
pub fn synthetic_circulant_model(d: usize, l: f64, mu_const: f64) -> Result<(DenseGaussian, SpectralModel)> {
    if d < 2 || !(l > 0.0 && l.is_finite()) || !mu_const.is_finite() {
        return Err(invalid(format!("synthetic model needs d >= 2 and l > 0, got d = {d}, l = {l}")));
    }
    let a: Vec<f64> = (0..d).map(|k| -l + 2.0 * l * k as f64 / (d - 1) as f64).collect();
    let am = circulant_matrix(&a);
    let cov = am.transpose() * &am;
    let mean = DVector::from_element(d, mu_const);
    let row: Vec<f64> = cov.row(0).iter().copied().collect();
    let eig: Vec<f64> = circulant_eigenvalues(&row).into_iter().map(|x| x.max(0.0)).collect();
    let mean_spectral = (real_fourier_basis(d).transpose() * &mean).iter().copied().collect();
    let model = SpectralModel::new(eig, mean_spectral, format!("synthetic-circulant(d={d},l={l},mu={mu_const})"))?;
    Ok((DenseGaussian { mean, covariance: cov }, model))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Circulant,
    Symmetric,
}

impl std::str::FromStr for Structure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circulant" => Ok(Structure::Circulant),
            "symmetric" => Ok(Structure::Symmetric),
            _ => Err(invalid(format!("unknown structure '{s}' (expected circulant or symmetric)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub window: usize,
    pub stride: usize,
    /// Windows with mean absolute amplitude below this are skipped.
    pub silence_threshold: f64,
    pub structure: Structure,
}

impl EstimationConfig {
    pub fn new(window: usize) -> Self {
        EstimationConfig { window, stride: window, silence_threshold: 0.05, structure: Structure::Circulant }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.stride == 0 || !(self.silence_threshold >= 0.0 && self.silence_threshold.is_finite()) {
            return Err(invalid(format!(
                "need window >= 2, stride >= 1 and a finite threshold >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub windows_used: usize,
    pub windows_rejected: usize,
}

/// Mean and unbiased covariance over windows of a 1-d signal.
///
/// With circulant structure the mean is the global sample mean repeated,
/// as befits a stationary signal; with symmetric structure it is estimated
/// per coordinate. The covariance is centered on that mean.
pub fn sliding_window_covariance(signal: &[f64], cfg: &EstimationConfig) -> Result<CovarianceEstimate> {
    cfg.validate()?;
    let d = cfg.window;
    if signal.len() < d {
        return Err(invalid(format!("signal has {} samples, shorter than the window {d}", signal.len())));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(invalid("signal contains non-finite samples"));
    }
    let starts = (0..=signal.len() - d).step_by(cfg.stride);
    let mut accepted = Vec::new();
    let mut rejected = 0;
    for st in starts {
        let w = &signal[st..st + d];
        let energy = w.iter().map(|x| x.abs()).sum::<f64>() / d as f64;
        if energy < cfg.silence_threshold {
            rejected += 1;
        } else {
            accepted.push(st);
        }
    }
    if accepted.is_empty() {
        return Err(invalid(format!("all {rejected} windows fall below the silence threshold")));
    }
    let n = accepted.len();
    let mut mean = DVector::zeros(d);
    for &st in &accepted {
        mean += DVector::from_column_slice(&signal[st..st + d]);
    }
    mean /= n as f64;
    if cfg.structure == Structure::Circulant {
        mean.fill(mean.sum() / d as f64);
    }
    let mut cov = DMatrix::zeros(d, d);
    for &st in &accepted {
        let x = DVector::from_column_slice(&signal[st..st + d]) - &mean;
        cov.ger(1.0, &x, &x, 1.0);
    }
    cov /= (n.max(2) - 1) as f64;
    Ok(CovarianceEstimate { mean, covariance: cov, windows_used: n, windows_rejected: rejected })
}

/// First row of the nearest symmetric Toeplitz matrix (diagonal means).
pub fn toeplitz_average(covariance: &DMatrix<f64>) -> Vec<f64> {
    let n = covariance.nrows().min(covariance.ncols());
    (0..n)
        .map(|k| (0..n - k).map(|i| 0.5 * (covariance[(i, i + k)] + covariance[(i + k, i)])).sum::<f64>() / (n - k) as f64)
        .collect()
}

/// Projects a Toeplitz first row onto circulant rows: lag `k` mixes the
/// `n - k` entries at lag `k` with the `k` entries at lag `n - k`.
pub fn circulant_projection(toeplitz_row: &[f64], n: usize) -> Result<Vec<f64>> {
    if toeplitz_row.len() != n || n == 0 {
        return Err(invalid(format!("row length {} does not match n = {n}", toeplitz_row.len())));
    }
    let nf = n as f64;
    Ok((0..n)
        .map(|k| {
            if k == 0 {
                toeplitz_row[0]
            } else {
                // Same as (b[k] (n - k) + b[n - k] k) / n, but exact when the
                // two lags already agree.
                toeplitz_row[k] + (toeplitz_row[n - k] - toeplitz_row[k]) * (k as f64 / nf)
            }
        })
        .collect())
}

/// Eigenvalues (descending) and matching eigenvectors of a symmetric
/// matrix. Each eigenvector's largest-magnitude entry is made positive.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(m.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let piv = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let sign = if piv < 0.0 { -1.0 } else { 1.0 };
        vecs.set_column(k, &(col * sign));
    }
    Ok((vals, vecs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFit {
    pub model: SpectralModel,
    /// Number of negative eigenvalues clamped to zero.
    pub floored: usize,
}

fn floor_eigenvalues(v: Vec<f64>) -> (Vec<f64>, usize) {
    let floored = v.iter().filter(|&&x| x < 0.0).count();
    (v.into_iter().map(|x| x.max(0.0)).collect(), floored)
}

pub fn spectral_model_from_covariance(est: &CovarianceEstimate, structure: Structure) -> Result<SpectralFit> {
    let d = est.mean.len();
    if d == 0 || est.covariance.nrows() != d || est.covariance.ncols() != d {
        return Err(invalid("estimate dimensions are inconsistent"));
    }
    if est.covariance.iter().chain(est.mean.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("estimate has non-finite entries".into()));
    }
    let (eig, mean_spectral, source) = match structure {
        Structure::Circulant => {
            let row = circulant_projection(&toeplitz_average(&est.covariance), d)?;
            let mu = real_fourier_basis(d).transpose() * &est.mean;
            (circulant_eigenvalues(&row), mu, "estimate-circulant")
        }
        Structure::Symmetric => {
            let (vals, vecs) = symmetric_eigen(&est.covariance)?;
            (vals, vecs.transpose() * &est.mean, "estimate-symmetric")
        }
    };
    let (eig, floored) = floor_eigenvalues(eig);
    let model = SpectralModel::new(eig, mean_spectral.iter().copied().collect(), source)?;
    Ok(SpectralFit { model, floored })
}

/// Keeps the `keep` largest eigenvalues with their mean components, ordered
/// by decreasing eigenvalue.
pub fn pca_truncate(model: &SpectralModel, keep: usize) -> Result<SpectralModel> {
    model.validate()?;
    if keep == 0 || keep > model.dim {
        return Err(invalid(format!("cannot keep {keep} of {} components", model.dim)));
    }
    let mut order: Vec<usize> = (0..model.dim).collect();
    order.sort_by(|&a, &b| model.eigenvalues[b].total_cmp(&model.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(keep);
    SpectralModel::new(
        order.iter().map(|&i| model.eigenvalues[i]).collect(),
        order.iter().map(|&i| model.mean_spectral[i]).collect(),
        format!("{} [top {keep}]", model.source),
    )
}
