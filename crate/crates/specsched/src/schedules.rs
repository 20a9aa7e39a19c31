//! Heuristic baseline schedules and schedule utilities.
//!
//! Every generator produces a raw decreasing curve on `t = s / S` and maps it
//! affinely onto `[epsS, 1 - eps0]`, so schedules of different families share
//! their endpoints exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{check_endpoints, Schedule, DEFAULT_EPS0, DEFAULT_EPS_S};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub eps0: f64,
    pub eps_s: f64,
}

impl Default for Endpoints {
    fn default() -> Self {
        Endpoints { eps0: DEFAULT_EPS0, eps_s: DEFAULT_EPS_S }
    }
}

/// Affine map of a strictly decreasing curve onto the endpoint interval.
fn map_endpoints(raw: &[f64], ends: Endpoints) -> Result<Vec<f64>> {
    let n = raw.len() - 1;
    let (hi, lo) = (raw[0], raw[n]);
    if !(hi > lo) || !(hi - lo).is_finite() {
        return Err(Error::Numerical(format!("degenerate raw schedule range [{lo}, {hi}]")));
    }
    let top = 1.0 - ends.eps0;
    let mut out: Vec<f64> = raw.iter().map(|&r| ends.eps_s + (r - lo) / (hi - lo) * (top - ends.eps_s)).collect();
    out[0] = top;
    out[n] = ends.eps_s;
    Ok(out)
}

fn check_common(steps: usize, ends: Endpoints) -> Result<()> {
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    check_endpoints(ends.eps0, ends.eps_s)
}

fn times(steps: usize) -> impl Iterator<Item = f64> {
    (0..=steps).map(move |s| s as f64 / steps as f64)
}

fn num(x: f64) -> String {
    format!("{x}")
}

const LINEAR_T: usize = 1000;
const LINEAR_BETA: (f64, f64) = (1e-4, 0.02);

/// Cumulative log-retention of the 1000-step linear-beta reference process.
fn linear_reference_log() -> Vec<f64> {
    let mut out = Vec::with_capacity(LINEAR_T + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 0..LINEAR_T {
        let beta = LINEAR_BETA.0 + (LINEAR_BETA.1 - LINEAR_BETA.0) * k as f64 / (LINEAR_T - 1) as f64;
        acc += (1.0 - beta).ln();
        out.push(acc);
    }
    out
}

/// Raw (unmapped) alpha-bar of the linear-beta process sampled at `S + 1`
/// evenly spaced points of the 1000-step reference.
fn linear_raw(steps: usize) -> Vec<f64> {
    let log = linear_reference_log();
    (0..=steps)
        .map(|s| {
            let u = (s * LINEAR_T) as f64 / steps as f64;
            let k = (u.floor() as usize).min(LINEAR_T - 1);
            let frac = u - k as f64;
            (log[k] + frac * (log[k + 1] - log[k])).exp()
        })
        .collect()
}

/// The linear-beta schedule (beta from 1e-4 to 0.02 over 1000 reference
/// steps), resampled to `steps` so the accumulated noise is independent of
/// the step count.
pub fn linear_schedule(steps: usize, ends: Endpoints) -> Result<Schedule> {
    check_common(steps, ends)?;
    let ab = map_endpoints(&linear_raw(steps), ends)?;
    Schedule::new("linear", ab, ends.eps0, ends.eps_s)
}

fn cosine_params(s: f64, e: f64, tau: f64) -> Result<()> {
    if !(0.0 <= s && s < e && e <= 1.0 && tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("cosine needs 0 <= s < e <= 1 and tau > 0, got ({s}, {e}, {tau})")));
    }
    Ok(())
}

fn cosine_raw(steps: usize, s: f64, e: f64, tau: f64) -> Vec<f64> {
    let f = |t: f64| {
        let c = ((t * (e - s) + s) * std::f64::consts::FRAC_PI_2).cos().max(0.0);
        c.powf(2.0 * tau)
    };
    let (f0, f1) = (f(0.0), f(1.0));
    times(steps).map(|t| (f(t) - f1) / (f0 - f1)).collect()
}

/// `cos((t (e - s) + s) pi / 2)^(2 tau)`, normalized to run from 1 to 0.
pub fn cosine_schedule(steps: usize, s: f64, e: f64, tau: f64, ends: Endpoints) -> Result<Schedule> {
    check_common(steps, ends)?;
    cosine_params(s, e, tau)?;
    let ab = map_endpoints(&cosine_raw(steps, s, e, tau), ends)?;
    Schedule::new(format!("cosine({},{},{})", num(s), num(e), num(tau)), ab, ends.eps0, ends.eps_s)
}

fn sigmoid_params(s: f64, e: f64, tau: f64) -> Result<()> {
    if !(s < e && s.is_finite() && e.is_finite() && tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("sigmoid needs s < e and tau > 0, got ({s}, {e}, {tau})")));
    }
    Ok(())
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sigmoid_raw(steps: usize, s: f64, e: f64, tau: f64) -> Vec<f64> {
    let g = |t: f64| logistic(-(t * (e - s) + s) / tau);
    let (g0, g1) = (g(0.0), g(1.0));
    times(steps).map(|t| (g(t) - g1) / (g0 - g1)).collect()
}

/// `logistic(-(t (e - s) + s) / tau)`, normalized to run from 1 to 0.
pub fn sigmoid_schedule(steps: usize, s: f64, e: f64, tau: f64, ends: Endpoints) -> Result<Schedule> {
    check_common(steps, ends)?;
    sigmoid_params(s, e, tau)?;
    let ab = map_endpoints(&sigmoid_raw(steps, s, e, tau), ends)?;
    Schedule::new(format!("sigmoid({},{},{})", num(s), num(e), num(tau)), ab, ends.eps0, ends.eps_s)
}

/// Karras-style sigma levels, noisiest first.
pub fn edm_sigmas(steps: usize, rho: f64, sigma_min: f64, sigma_max: f64) -> Vec<f64> {
    let (a, b) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
    (0..=steps).map(|i| (a + i as f64 / steps as f64 * (b - a)).powf(rho)).collect()
}

pub fn edm_schedule(steps: usize, rho: f64, sigma_min: f64, sigma_max: f64, ends: Endpoints) -> Result<Schedule> {
    check_common(steps, ends)?;
    if !(rho >= 1.0 && rho.is_finite() && sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(invalid(format!(
            "edm needs rho >= 1 and 0 < sigma_min < sigma_max, got ({rho}, {sigma_min}, {sigma_max})"
        )));
    }
    let sig = edm_sigmas(steps, rho, sigma_min, sigma_max);
    let raw: Vec<f64> = sig.iter().rev().map(|&s| crate::spectral::sigma_to_alpha_bar(s)).collect();
    let ab = map_endpoints(&raw, ends)?;
    Schedule::new(format!("edm({},{},{})", num(rho), num(sigma_min), num(sigma_max)), ab, ends.eps0, ends.eps_s)
}

/// Resamples a schedule to `new_steps` by linear interpolation over
/// normalized time.
pub fn warm_start_interpolate(schedule: &Schedule, new_steps: usize) -> Result<Schedule> {
    schedule.validate_box()?;
    if new_steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    let old = schedule.steps;
    let ab: Vec<f64> = (0..=new_steps)
        .map(|j| {
            let num = j * old;
            let k = num / new_steps;
            if num.is_multiple_of(new_steps) {
                return schedule.alpha_bar[k];
            }
            let frac = (num % new_steps) as f64 / new_steps as f64;
            schedule.alpha_bar[k] + frac * (schedule.alpha_bar[k + 1] - schedule.alpha_bar[k])
        })
        .collect();
    let kind = if new_steps == old { schedule.kind.clone() } else { "custom".to_string() };
    let mut out = Schedule::new_unchecked(kind, ab, schedule.eps0, schedule.eps_s);
    out.alpha_bar[0] = 1.0 - schedule.eps0;
    out.alpha_bar[new_steps] = schedule.eps_s;
    out.validate_box()?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cosine,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub s: f64,
    pub e: f64,
    pub tau: f64,
    /// Euclidean norm of the alpha-bar mismatch.
    pub residual: f64,
}

fn family_curve(family: Family, steps: usize, p: [f64; 3], ends: Endpoints) -> Option<Vec<f64>> {
    let raw = match family {
        Family::Cosine => {
            cosine_params(p[0], p[1], p[2]).ok()?;
            cosine_raw(steps, p[0], p[1], p[2])
        }
        Family::Sigmoid => {
            sigmoid_params(p[0], p[1], p[2]).ok()?;
            sigmoid_raw(steps, p[0], p[1], p[2])
        }
    };
    let out = map_endpoints(&raw, ends).ok()?;
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Least-squares fit of a cosine or sigmoid family to a schedule: a coarse
/// parameter grid followed by simplex refinement of the best candidates.
pub fn fit_parametric(schedule: &Schedule, family: Family) -> Result<ParametricFit> {
    schedule.validate_box()?;
    let ends = Endpoints { eps0: schedule.eps0, eps_s: schedule.eps_s };
    let target = &schedule.alpha_bar;
    let cost = |p: [f64; 3]| match family_curve(family, schedule.steps, p, ends) {
        Some(c) => c.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        None => f64::INFINITY,
    };
    let (s_grid, e_grid, tau_grid): (Vec<f64>, Vec<f64>, Vec<f64>) = match family {
        Family::Cosine => (
            (0..9).map(|i| i as f64 * 0.1).collect(),
            (1..=10).map(|i| i as f64 * 0.1).collect(),
            vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
        ),
        Family::Sigmoid => (
            (-6..=3).map(f64::from).collect(),
            (-3..=6).map(f64::from).collect(),
            vec![0.25, 0.5, 1.0, 2.0, 4.0],
        ),
    };
    let mut cands: Vec<([f64; 3], f64)> = Vec::new();
    for &s in &s_grid {
        for &e in &e_grid {
            for &tau in &tau_grid {
                let p = [s, e, tau];
                let c = cost(p);
                if c.is_finite() {
                    cands.push((p, c));
                }
            }
        }
    }
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best = cands.first().copied().ok_or_else(|| Error::Numerical("no admissible grid point".into()))?;
    for &(p, _) in cands.iter().take(4) {
        let (q, c) = nelder_mead(&cost, p, 0.05, 4000, 1e-14);
        if c < best.1 {
            best = (q, c);
        }
    }
    let [s, e, tau] = best.0;
    Ok(ParametricFit { s, e, tau, residual: best.1 })
}

/// Derivative-free simplex minimization in three dimensions.
fn nelder_mead(f: &dyn Fn([f64; 3]) -> f64, x0: [f64; 3], step: f64, max_eval: usize, tol: f64) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = vec![(x0, f(x0))];
    for k in 0..3 {
        let mut x = x0;
        x[k] += if x[k] == 0.0 { step } else { step * x[k].abs().max(0.1) };
        simplex.push((x, f(x)));
    }
    let mut evals = 4;
    let lerp = |a: [f64; 3], b: [f64; 3], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])];
    while evals < max_eval {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[3].1 - simplex[0].1).abs() <= tol * (1.0 + simplex[0].1.abs()) && simplex[3].1.is_finite() {
            break;
        }
        let mut c = [0.0; 3];
        for v in &simplex[..3] {
            for k in 0..3 {
                c[k] += v.0[k] / 3.0;
            }
        }
        let worst = simplex[3];
        let xr = lerp(c, worst.0, -1.0);
        let fr = f(xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = lerp(c, worst.0, -2.0);
            let fe = f(xe);
            evals += 1;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let xc = if fr < worst.1 { lerp(c, xr, 0.5) } else { lerp(c, worst.0, 0.5) };
            let fc = f(xc);
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(b, v.0, 0.5);
                    v.1 = f(v.0);
                }
                evals += 3;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}
