//! Closed-form spectral transfer of the DDIM/DDPM reverse processes.
//!
//! With the exact Wiener denoiser every reverse step acts independently on
//! each eigen-coordinate `v` as `v <- G(s) v + M(s) mu`, so the whole sampler
//! collapses to a diagonal affine map `v0 = D1 vS + D2 mu` (plus injected
//! variance for DDPM).

use crate::dual::Real;
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{Formulation, GaussianDiag, Process, Schedule, SpectralModel, Transfer, VeSchedule};

/// Posterior mean of `v0` given `v_t` at noise level `alpha_bar`.
pub fn wiener_denoise(model: &SpectralModel, alpha_bar: f64, v_t: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.dim, v_t.len())?;
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(invalid(format!("alpha_bar = {alpha_bar} is outside (0, 1]")));
    }
    let sa = alpha_bar.sqrt();
    Ok(model
        .eigenvalues
        .iter()
        .zip(&model.mean_spectral)
        .zip(v_t)
        .map(|((&lam, &mu), &v)| {
            let den = alpha_bar * lam + 1.0 - alpha_bar;
            if den == 0.0 {
                // alpha_bar = 1 and lam = 0: no noise was added.
                v
            } else {
                (sa * lam * v + (1.0 - alpha_bar) * mu) / den
            }
        })
        .collect())
}

/// DDIM coefficients `(a_s, b_s)` with `x_{s-1} = a_s x_s + b_s x0_hat`.
pub fn ddim_gains(alpha_bar_prev: f64, alpha_bar_cur: f64) -> Result<(f64, f64)> {
    check_pair(alpha_bar_prev, alpha_bar_cur)?;
    let (a, b, _) = step_coeffs(alpha_bar_prev, alpha_bar_cur, Process::Ddim);
    Ok((a, b.max(0.0)))
}

/// DDPM coefficients `(a_t, b_t, c_t)` with
/// `x_{t-1} = a_t x_t + b_t x0_hat + c_t z`.
pub fn ddpm_coefficients(alpha_bar_prev: f64, alpha_bar_cur: f64) -> Result<(f64, f64, f64)> {
    check_pair(alpha_bar_prev, alpha_bar_cur)?;
    let (a, b, c2) = step_coeffs(alpha_bar_prev, alpha_bar_cur, Process::Ddpm);
    Ok((a, b.max(0.0), c2.max(0.0).sqrt()))
}

fn check_pair(prev: f64, cur: f64) -> Result<()> {
    if !(cur > 0.0 && cur <= prev && prev < 1.0) {
        return Err(invalid(format!(
            "need 0 < alpha_bar_cur <= alpha_bar_prev < 1, got prev = {prev}, cur = {cur}"
        )));
    }
    Ok(())
}

/// Returns `(a, b, c^2)` for one reverse step from `c` to `p` (`p >= c`).
#[inline]
pub(crate) fn step_coeffs<T: Real>(p: T, c: T, process: Process) -> (T, T, T) {
    let one = T::cst(1.0);
    match process {
        Process::Ddim => {
            let a = (one - p).sqrt() / (one - c).sqrt();
            let b = p.sqrt() - c.sqrt() * a;
            (a, b, T::cst(0.0))
        }
        Process::Ddpm => {
            let sp = p.sqrt();
            let a = c.sqrt() * (one - p) / (sp * (one - c));
            let b = (p - c) / (sp * (one - c));
            let c2 = (one - p) * (p - c) / ((one - c) * p);
            (a, b, c2)
        }
    }
}

/// Per-step gain `G`, mean injection `M` and noise variance `c^2` for an
/// eigenvalue `lam`.
#[inline]
pub(crate) fn step_terms<T: Real>(p: T, c: T, lam: f64, process: Process) -> (T, T, T) {
    let (a, b, c2) = step_coeffs(p, c, process);
    let one = T::cst(1.0);
    let l = T::cst(lam);
    let den = c * l + one - c;
    let g = a + b * c.sqrt() * l / den;
    let m = b * (one - c) / den;
    (g, m, c2)
}

/// VP step gains `(G, M)` for the pair `(alpha_bar_prev, alpha_bar_cur)`.
pub fn vp_step(alpha_bar_prev: f64, alpha_bar_cur: f64, lambda: f64) -> (f64, f64) {
    let (g, m, _) = step_terms(alpha_bar_prev, alpha_bar_cur, lambda, Process::Ddim);
    (g, m)
}

/// VE step gains `(G, M)` for the pair `(sigma_prev, sigma_cur)`.
pub fn ve_step(sigma_prev: f64, sigma_cur: f64, lambda: f64) -> (f64, f64) {
    let a = sigma_prev / sigma_cur;
    let b = 1.0 - a;
    let s2 = sigma_cur * sigma_cur;
    (a + b * lambda / (lambda + s2), b * s2 / (lambda + s2))
}

/// `(D1, D2, var_extra)` for raw schedule values; no validation.
pub(crate) fn transfer_raw(eigenvalues: &[f64], alpha_bar: &[f64], process: Process) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = eigenvalues.len();
    let mut d1 = vec![1.0; d];
    let mut d2 = vec![0.0; d];
    let mut var = vec![0.0; d];
    for s in 1..alpha_bar.len() {
        let (p, c) = (alpha_bar[s - 1], alpha_bar[s]);
        for i in 0..d {
            let (g, m, c2) = step_terms(p, c, eigenvalues[i], process);
            d2[i] += d1[i] * m;
            var[i] += d1[i] * d1[i] * c2;
            d1[i] *= g;
        }
    }
    (d1, d2, var)
}

pub fn ddim_transfer(model: &SpectralModel, schedule: &Schedule) -> Result<Transfer> {
    transfer(model, schedule, Process::Ddim)
}

pub fn ddpm_transfer(model: &SpectralModel, schedule: &Schedule) -> Result<Transfer> {
    transfer(model, schedule, Process::Ddpm)
}

pub fn transfer(model: &SpectralModel, schedule: &Schedule, process: Process) -> Result<Transfer> {
    model.validate()?;
    schedule.validate()?;
    let (d1, d2, var_extra) = transfer_raw(&model.eigenvalues, &schedule.alpha_bar, process);
    Ok(Transfer { d1, d2, var_extra, process, formulation: Formulation::Vp })
}

/// Distribution of the DDIM state after running steps `S..l+1`, starting
/// from `vS ~ N(0, I)`.
pub fn intermediate_distribution(model: &SpectralModel, schedule: &Schedule, l: usize) -> Result<GaussianDiag> {
    model.validate()?;
    schedule.validate()?;
    if l > schedule.steps {
        return Err(invalid(format!("step index {l} exceeds S = {}", schedule.steps)));
    }
    let (d1, d2, _) = transfer_raw(&model.eigenvalues, &schedule.alpha_bar[l..], Process::Ddim);
    Ok(GaussianDiag {
        mean: d2.iter().zip(&model.mean_spectral).map(|(k, m)| k * m).collect(),
        variance: d1.iter().map(|g| g * g).collect(),
    })
}

pub fn output_distribution(transfer: &Transfer, model: &SpectralModel) -> Result<GaussianDiag> {
    check_dim(model.dim, transfer.dim())?;
    Ok(GaussianDiag {
        mean: transfer.d2.iter().zip(&model.mean_spectral).map(|(k, m)| k * m).collect(),
        variance: transfer.variance(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanBias {
    /// `(D2 - 1) * mu` per coordinate.
    pub bias: Vec<f64>,
    /// `|D2 - 1|` per coordinate, independent of the mean.
    pub gain_error: Vec<f64>,
}

pub fn mean_bias(transfer: &Transfer, model: &SpectralModel) -> Result<MeanBias> {
    check_dim(model.dim, transfer.dim())?;
    Ok(MeanBias {
        bias: transfer.d2.iter().zip(&model.mean_spectral).map(|(k, m)| (k - 1.0) * m).collect(),
        gain_error: transfer.d2.iter().map(|k| (k - 1.0).abs()).collect(),
    })
}

pub fn alpha_bar_to_sigma(alpha_bar: f64) -> f64 {
    ((1.0 - alpha_bar) / alpha_bar).sqrt()
}

pub fn sigma_to_alpha_bar(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma)
}

pub fn vp_to_ve(schedule: &Schedule) -> Result<VeSchedule> {
    schedule.validate()?;
    let ve = VeSchedule {
        steps: schedule.steps,
        sigma: schedule.alpha_bar.iter().map(|&a| alpha_bar_to_sigma(a)).collect(),
    };
    ve.validate()?;
    Ok(ve)
}

/// Inverse of [`vp_to_ve`]; the endpoint parameters are read off the
/// converted values.
pub fn ve_to_vp(ve: &VeSchedule) -> Result<Schedule> {
    ve.validate()?;
    if ve.sigma[0] == 0.0 {
        return Err(Error::InvalidSchedule("sigma[0] = 0 maps to alpha_bar = 1, which is not a valid endpoint".into()));
    }
    let alpha_bar: Vec<f64> = ve.sigma.iter().map(|&s| sigma_to_alpha_bar(s)).collect();
    let eps0 = 1.0 - alpha_bar[0];
    let eps_s = alpha_bar[ve.steps];
    Schedule::new("custom", alpha_bar, eps0, eps_s)
}

/// DDIM in the variance-exploding parameterization.
///
/// The VE state is `x_ve = x_vp / sqrt(alpha_bar)`. The returned `d1`
/// includes the input scale `sqrt(1 + sigma_S^2)`, so the output is again
/// described for a standard-normal input; with `sigma = sqrt((1 - a) / a)`
/// it equals the VP transfer divided by `sqrt(alpha_bar_0)`.
pub fn ve_ddim_transfer(model: &SpectralModel, ve: &VeSchedule) -> Result<Transfer> {
    model.validate()?;
    ve.validate()?;
    if let Some(s) = (1..=ve.steps).find(|&s| ve.sigma[s] <= 0.0) {
        return Err(Error::InvalidSchedule(format!("sigma[{s}] must be positive")));
    }
    let d = model.dim;
    let mut d1 = vec![1.0; d];
    let mut d2 = vec![0.0; d];
    for s in 1..=ve.steps {
        for i in 0..d {
            let (g, m) = ve_step(ve.sigma[s - 1], ve.sigma[s], model.eigenvalues[i]);
            d2[i] += d1[i] * m;
            d1[i] *= g;
        }
    }
    let scale = (1.0 + ve.sigma[ve.steps].powi(2)).sqrt();
    d1.iter_mut().for_each(|g| *g *= scale);
    Ok(Transfer { d1, d2, var_extra: vec![0.0; d], process: Process::Ddim, formulation: Formulation::Ve })
}
