//! Time-domain Monte Carlo of the reverse process with the exact Wiener
//! denoiser, plus diagnostics computed from the intermediate distributions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{Process, Schedule, SpectralModel};
use crate::rng::CounterRng;
use crate::spectral::step_coeffs;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Gaussian with a dense covariance, in signal coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl DenseGaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let g = DenseGaussian { mean, covariance };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        check_dim(d, self.covariance.nrows())?;
        check_dim(d, self.covariance.ncols())?;
        if self.covariance.iter().chain(self.mean.iter()).any(|x| !x.is_finite()) {
            return Err(invalid("non-finite entry in mean or covariance"));
        }
        let scale = self.covariance.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (self.covariance[(i, j)] - self.covariance[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(invalid(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let min = self.covariance.clone().symmetric_eigenvalues().min();
        if min < -PSD_TOL * scale {
            return Err(invalid(format!("covariance is not positive semidefinite (eigenvalue {min})")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub process: Process,
    pub samples: usize,
    pub seed: u64,
    pub schedule: Schedule,
}

/// One reverse step `x <- gain x + offset + noise * z`.
#[derive(Clone, Debug)]
pub struct AffineStep {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise: f64,
}

/// Dense Wiener denoiser at level `alpha_bar`: `x0_hat = k x + c`.
pub fn dense_wiener(target: &DenseGaussian, alpha_bar: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = target.dim();
    let sigma = &target.covariance;
    let b = sigma * alpha_bar + DMatrix::identity(d, d) * (1.0 - alpha_bar);
    let chol = b
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("denoiser system is singular at alpha_bar = {alpha_bar}")))?;
    let k = chol.solve(&(sigma * alpha_bar.sqrt()));
    let c = chol.solve(&(&target.mean * (1.0 - alpha_bar)));
    Ok((k, c))
}

/// Per-step affine maps in execution order (step `S` first).
pub fn reverse_steps(target: &DenseGaussian, schedule: &Schedule, process: Process) -> Result<Vec<AffineStep>> {
    schedule.validate()?;
    let d = target.dim();
    (1..=schedule.steps)
        .rev()
        .map(|s| {
            let (p, c) = (schedule.alpha_bar[s - 1], schedule.alpha_bar[s]);
            let (a, b, c2) = step_coeffs(p, c, process);
            let (k, off) = dense_wiener(target, c)?;
            Ok(AffineStep {
                gain: DMatrix::identity(d, d) * a + k * b,
                offset: off * b,
                noise: c2.max(0.0).sqrt(),
            })
        })
        .collect()
}

/// The deterministic part of the sampler folded into one map
/// `x0 = gain xS + offset`.
pub fn fold_steps(steps: &[AffineStep], dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut gain = DMatrix::identity(dim, dim);
    let mut offset = DVector::zeros(dim);
    for st in steps {
        gain = &st.gain * gain;
        offset = &st.gain * offset + &st.offset;
    }
    (gain, offset)
}

/// Draws `cfg.samples` outputs of the reverse process, one per row.
///
/// Sample `i` uses random stream `i` of `cfg.seed`: first `d` normals for
/// the starting noise, then (DDPM only) `d` normals per step from `S` down
/// to 1.
pub fn simulate_reverse(target: &DenseGaussian, cfg: &SimConfig) -> Result<DMatrix<f64>> {
    target.validate()?;
    if cfg.samples == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let d = target.dim();
    let steps = reverse_steps(target, &cfg.schedule, cfg.process)?;
    let folded = fold_steps(&steps, d);
    let rows: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::new(cfg.seed, i as u64);
            let z = DVector::from_fn(d, |_, _| rng.next_normal());
            let x = match cfg.process {
                Process::Ddim => &folded.0 * z + &folded.1,
                Process::Ddpm => {
                    let mut x = z;
                    for st in &steps {
                        let noise = DVector::from_fn(d, |_, _| rng.next_normal());
                        x = &st.gain * x + &st.offset + noise * st.noise;
                    }
                    x
                }
            };
            x.iter().copied().collect()
        })
        .collect();
    Ok(DMatrix::from_fn(cfg.samples, d, |i, j| rows[i][j]))
}

/// Sample mean and unbiased covariance of the rows of `samples`.
pub fn empirical_moments(samples: &DMatrix<f64>) -> Result<DenseGaussian> {
    let n = samples.nrows();
    if n < 2 {
        return Err(invalid("need at least two samples"));
    }
    let mean = DVector::from_iterator(samples.ncols(), samples.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = samples.clone();
    for (mut col, m) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    let sym = (&cov + cov.transpose()) * 0.5;
    cov.copy_from(&sym);
    Ok(DenseGaussian { mean, covariance: cov })
}

type Table = Vec<Vec<f64>>;

/// Standard deviation and mean coefficient of the DDIM state at every step
/// `l = 0..S`, via the reverse recursion from `vS ~ N(0, I)`.
fn dynamics(model: &SpectralModel, schedule: &Schedule) -> Result<(Table, Table)> {
    model.validate()?;
    schedule.validate()?;
    let n = schedule.steps;
    let d = model.dim;
    let mut sd = vec![vec![1.0; d]; n + 1];
    let mut coef = vec![vec![0.0; d]; n + 1];
    for l in (0..n).rev() {
        let (p, c) = (schedule.alpha_bar[l], schedule.alpha_bar[l + 1]);
        for i in 0..d {
            let (g, m, _) = crate::spectral::step_terms(p, c, model.eigenvalues[i], Process::Ddim);
            sd[l][i] = g * sd[l + 1][i];
            coef[l][i] = g * coef[l + 1][i] + m;
        }
    }
    Ok((sd, coef))
}

/// Divisor guard for relative errors.
pub const EPS_DIV: f64 = 1e-12;

/// `|lambda - var_l| / (lambda + EPS_DIV)` for every step `l` (rows) and
/// coordinate (columns).
pub fn relative_error_dynamics(model: &SpectralModel, schedule: &Schedule) -> Result<Vec<Vec<f64>>> {
    let (sd, _) = dynamics(model, schedule)?;
    Ok(sd
        .iter()
        .map(|row| {
            row.iter()
                .zip(&model.eigenvalues)
                .map(|(s, &lam)| (lam - s * s).abs() / (lam + EPS_DIV))
                .collect()
        })
        .collect())
}

/// Squared 2-Wasserstein distance from the target at every step `l`.
pub fn w2_dynamics(model: &SpectralModel, schedule: &Schedule) -> Result<Vec<f64>> {
    let (sd, coef) = dynamics(model, schedule)?;
    Ok(sd
        .iter()
        .zip(&coef)
        .map(|(srow, crow)| {
            let mut acc = 0.0;
            for i in 0..model.dim {
                let r = model.eigenvalues[i].sqrt() - srow[i];
                let mu = model.mean_spectral[i];
                acc += r * r + mu * mu * (crow[i] - 1.0) * (crow[i] - 1.0);
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ddim_gains;

    #[test]
    fn one_step_scalar_sample() {
        let target = DenseGaussian::new(DVector::from_element(1, 0.5), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let schedule = Schedule::new("custom", vec![0.9999, 4e-5], 1e-4, 4e-5).unwrap();
        let cfg = SimConfig { process: Process::Ddim, samples: 3, seed: 11, schedule };
        let out = simulate_reverse(&target, &cfg).unwrap();
        let (a, b) = ddim_gains(0.9999, 4e-5).unwrap();
        for i in 0..3 {
            let z = CounterRng::new(11, i as u64).next_normal();
            let c: f64 = 4e-5;
            let wiener = (c.sqrt() * 2.0 * z + (1.0 - c) * 0.5) / (c * 2.0 + 1.0 - c);
            assert!((out[(i, 0)] - (a * z + b * wiener)).abs() < 1e-14);
        }
    }

    #[test]
    fn moments_small_cases() {
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(empirical_moments(&same).unwrap().covariance, DMatrix::zeros(2, 2));
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let m = empirical_moments(&two).unwrap();
        assert_eq!(m.mean[0], 1.0);
        assert_eq!(m.covariance[(0, 0)], 2.0);
        assert!(empirical_moments(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn dense_gaussian_rejects_bad_covariances() {
        let m = DVector::zeros(2);
        assert!(DenseGaussian::new(m.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(DenseGaussian::new(m.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(DenseGaussian::new(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).is_ok());
    }
}
