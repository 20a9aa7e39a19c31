//! Schedule optimization: minimize a loss over the interior values
//! `alpha_bar[1..S]` with fixed endpoints, optionally keeping the schedule
//! nonincreasing.
//!
//! The solver is a projected BFGS method. Each trial point is projected onto
//! the feasible set (a box, intersected with the monotone cone in
//! constrained mode) and accepted by an Armijo test along the projected
//! path. The curvature model is reset to a scaled gradient step whenever it
//! stops producing descent.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{LossContext, LossKind, FD_STEP};
use crate::model::{check_endpoints, Process, Schedule, SpectralModel, DEFAULT_EPS0, DEFAULT_EPS_S};
use crate::rng::CounterRng;
use crate::schedules::{cosine_schedule, warm_start_interpolate, Endpoints};

/// Minimum gap kept between neighbouring schedule values in constrained mode.
pub const MIN_SPACING: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Constrained,
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Straight line from `1 - eps0` down to `epsS`.
    Linear,
    Cosine,
    /// Independent uniform draws in the box, sorted into decreasing order.
    UniformRandom(u64),
    WarmStart(Schedule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub loss: LossKind,
    pub process: Process,
    pub steps: usize,
    pub eps0: f64,
    #[serde(rename = "epsS")]
    pub eps_s: f64,
    pub mode: Mode,
    pub init: Init,
    pub max_iter: usize,
    pub ftol: f64,
    pub gtol: f64,
    pub single_eigenvalue_index: Option<usize>,
    pub gradient: GradientMethod,
}

impl OptimizeConfig {
    pub fn new(loss: LossKind, steps: usize) -> Self {
        OptimizeConfig {
            loss,
            process: Process::Ddim,
            steps,
            eps0: DEFAULT_EPS0,
            eps_s: DEFAULT_EPS_S,
            mode: Mode::Constrained,
            init: Init::Linear,
            max_iter: 2000,
            ftol: 1e-6,
            gtol: 1e-8,
            single_eigenvalue_index: None,
            gradient: GradientMethod::Analytic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(invalid(format!("optimization needs at least 2 steps, got {}", self.steps)));
        }
        check_endpoints(self.eps0, self.eps_s)?;
        if !(self.ftol > 0.0 && self.gtol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub final_loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub objective_evals: usize,
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    pub stop_reason: String,
    pub wall_time_seconds: f64,
}

/// Euclidean projection onto nonincreasing vectors with entries in
/// `[lower, upper]` (pool adjacent violators, then clipping).
pub fn isotonic_project(values: &[f64], lower: f64, upper: f64) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut cur = (v, 1usize);
        while let Some(&(sum, cnt)) = blocks.last() {
            if sum / (cnt as f64) < cur.0 / (cur.1 as f64) {
                blocks.pop();
                cur = (cur.0 + sum, cur.1 + cnt);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(values.len());
    for (sum, cnt) in blocks {
        let m = (sum / cnt as f64).clamp(lower, upper);
        out.extend(std::iter::repeat_n(m, cnt));
    }
    out
}

/// Copy of `model` keeping only eigenvalue `index`; every mean entry is
/// zeroed.
pub fn single_eigenvalue_problem(model: &SpectralModel, index: usize) -> Result<SpectralModel> {
    model.validate()?;
    if index >= model.dim {
        return Err(invalid(format!("eigenvalue index {index} out of range for dimension {}", model.dim)));
    }
    let mut eig = vec![0.0; model.dim];
    eig[index] = model.eigenvalues[index];
    SpectralModel::new(eig, vec![0.0; model.dim], format!("{} [eigenvalue {index}]", model.source))
}

struct Problem<'a> {
    ctx: LossContext<'a>,
    process: Process,
    gradient: GradientMethod,
    mode: Mode,
    lo: f64,
    hi: f64,
    full: Vec<f64>,
    evals: usize,
}

impl Problem<'_> {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        match self.mode {
            Mode::Free => x.iter().map(|v| v.clamp(self.lo, self.hi)).collect(),
            Mode::Constrained => {
                let mut y = isotonic_project(x, self.lo, self.hi);
                let n = y.len();
                let mut floor = self.lo;
                for k in (0..n).rev() {
                    floor += MIN_SPACING;
                    y[k] = y[k].max(floor);
                    floor = y[k];
                }
                let mut ceil = self.hi;
                for v in y.iter_mut() {
                    ceil -= MIN_SPACING;
                    *v = v.min(ceil);
                    ceil = *v;
                }
                y
            }
        }
    }

    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.full[1..=x.len()].copy_from_slice(x);
        self.evals += 1;
        match self.gradient {
            GradientMethod::Analytic => {
                let (f, g) = self.ctx.objective_grad(&self.full, self.process);
                (f, g[1..=x.len()].to_vec())
            }
            GradientMethod::FiniteDifference => {
                let f = self.ctx.objective(&self.full, self.process);
                let mut g = vec![0.0; x.len()];
                let mut work = self.full.clone();
                for k in 0..x.len() {
                    let s = k + 1;
                    let v = work[s];
                    let h = FD_STEP * v.abs().max(1.0);
                    let h = h.min(0.5 * (work[s - 1] - v).abs().max(MIN_SPACING)).min(0.5 * (v - work[s + 1]).abs().max(MIN_SPACING));
                    work[s] = v + h;
                    let fp = self.ctx.objective(&work, self.process);
                    work[s] = v - h;
                    let fm = self.ctx.objective(&work, self.process);
                    work[s] = v;
                    g[k] = (fp - fm) / (2.0 * h);
                }
                self.evals += 2 * x.len();
                (f, g)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn initial_interior(cfg: &OptimizeConfig) -> Result<Vec<f64>> {
    let (hi, lo, n) = (1.0 - cfg.eps0, cfg.eps_s, cfg.steps);
    let ends = Endpoints { eps0: cfg.eps0, eps_s: cfg.eps_s };
    Ok(match &cfg.init {
        Init::Linear => (1..n).map(|k| hi + (lo - hi) * k as f64 / n as f64).collect(),
        Init::Cosine => cosine_schedule(n, 0.0, 1.0, 1.0, ends)?.alpha_bar[1..n].to_vec(),
        Init::UniformRandom(seed) => {
            let mut rng = CounterRng::new(*seed, 0);
            let mut v: Vec<f64> = (1..n).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        }
        Init::WarmStart(prev) => warm_start_interpolate(prev, n)?.alpha_bar[1..n].to_vec(),
    })
}

/// Minimizes the configured loss over schedules with `cfg.steps` steps.
pub fn optimize_schedule(model: &SpectralModel, cfg: &OptimizeConfig) -> Result<(Schedule, OptimizeReport)> {
    let start = Instant::now();
    cfg.validate()?;
    model.validate()?;
    let reduced;
    let model = match cfg.single_eigenvalue_index {
        Some(i) => {
            reduced = single_eigenvalue_problem(model, i)?;
            &reduced
        }
        None => model,
    };
    if model.eigenvalues.iter().all(|&l| l == 0.0) && model.mean_spectral.iter().all(|&m| m == 0.0) {
        return Err(invalid("model is degenerate: all eigenvalues and mean entries are zero"));
    }
    let n = cfg.steps;
    let (lo, hi) = (cfg.eps_s, 1.0 - cfg.eps0);
    let mut full = vec![0.0; n + 1];
    full[0] = hi;
    full[n] = lo;
    let mut pb = Problem {
        ctx: LossContext::new(cfg.loss, model)?,
        process: cfg.process,
        gradient: cfg.gradient,
        mode: cfg.mode,
        lo,
        hi,
        full,
        evals: 0,
    };

    let mut x = pb.project(&initial_interior(cfg)?);
    let (mut f, mut g) = pb.value_grad(&x);
    if !f.is_finite() {
        return Err(Error::Numerical(format!("objective is not finite at the initial schedule ({f})")));
    }
    let initial_loss = f;
    let mut trace = vec![f];
    let m = x.len();
    let mut h: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut stop = String::from("max_iter reached");
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let probe: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let pg = pb.project(&probe);
        let pg_norm = x.iter().zip(&pg).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        if pg_norm < cfg.gtol {
            converged = true;
            stop = "projected gradient below gtol".into();
            break;
        }
        iterations += 1;
        let gscale = 1e-2 / inf_norm(&g).max(1e-300);
        let mut dir: Vec<f64> = match &h {
            Some(hm) => (0..m).map(|i| -dot(&hm[i * m..(i + 1) * m], &g)).collect(),
            None => g.iter().map(|v| -v * gscale).collect(),
        };
        if dot(&dir, &g) >= 0.0 {
            h = None;
            dir = g.iter().map(|v| -v * gscale).collect();
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let xn = pb.project(&trial);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if inf_norm(&step) == 0.0 {
                break;
            }
            let (fn_, gn) = pb.value_grad(&xn);
            if fn_.is_finite() && fn_ <= f + 1e-4 * dot(&g, &step) {
                accepted = Some((xn, step, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, s, fn_, gn)) = accepted else {
            if h.is_some() {
                h = None;
                continue;
            }
            converged = pg_norm < 1e-6;
            stop = "line search made no progress".into();
            break;
        };

        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * yy.sqrt() {
            let hm = h.get_or_insert_with(|| {
                let mut id = vec![0.0; m * m];
                for i in 0..m {
                    id[i * m + i] = sy / yy;
                }
                id
            });
            bfgs_update(hm, &s, &y, sy);
        }

        let rel = (f - fn_).abs() / f.abs().max(fn_.abs()).max(1e-300);
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        if rel < cfg.ftol {
            converged = true;
            stop = "relative objective change below ftol".into();
            break;
        }
    }

    let mut ab = Vec::with_capacity(n + 1);
    ab.push(hi);
    ab.extend_from_slice(&x);
    ab.push(lo);
    let schedule = Schedule::new_unchecked("spectral-optimized", ab, cfg.eps0, cfg.eps_s);
    match cfg.mode {
        Mode::Constrained => schedule.validate()?,
        Mode::Free => schedule.validate_box()?,
    }
    let report = OptimizeReport {
        final_loss: f,
        initial_loss,
        iterations,
        objective_evals: pb.evals,
        loss_trace: trace,
        converged,
        stop_reason: stop,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((schedule, report))
}

/// Runs [`optimize_schedule`] from each initialization and keeps the best.
pub fn optimize_multistart(model: &SpectralModel, cfg: &OptimizeConfig, inits: &[Init]) -> Result<(Schedule, OptimizeReport)> {
    let mut best: Option<(Schedule, OptimizeReport)> = None;
    for init in inits {
        let c = OptimizeConfig { init: init.clone(), ..cfg.clone() };
        let run = optimize_schedule(model, &c)?;
        if best.as_ref().is_none_or(|b| run.1.final_loss < b.1.final_loss) {
            best = Some(run);
        }
    }
    best.ok_or_else(|| invalid("no initialization given"))
}

/// Inverse-Hessian BFGS update, `H <- (I - r s y')H(I - r y s') + r s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + r * yhy) * r;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotonic_basic_cases() {
        let mono = vec![0.9, 0.7, 0.7, 0.2];
        assert_eq!(isotonic_project(&mono, 0.0, 1.0), mono);
        assert_eq!(isotonic_project(&[0.2, 0.8], 0.0, 1.0), vec![0.5, 0.5]);
        assert_eq!(isotonic_project(&[1.5, -0.3], 0.0, 1.0), vec![1.0, 0.0]);
        assert!(isotonic_project(&[], 0.0, 1.0).is_empty());
    }

    #[test]
    fn single_eigenvalue_copy() {
        let m = SpectralModel::new(vec![3.0, 2.0, 1.0], vec![1.0, 1.0, 1.0], "m").unwrap();
        let r = single_eigenvalue_problem(&m, 0).unwrap();
        assert_eq!(r.eigenvalues, vec![3.0, 0.0, 0.0]);
        assert_eq!(r.mean_spectral, vec![0.0; 3]);
        assert!(single_eigenvalue_problem(&m, 3).is_err());
    }

    #[test]
    fn config_validation() {
        let m = SpectralModel::new(vec![1.0], vec![0.0], "m").unwrap();
        assert!(optimize_schedule(&m, &OptimizeConfig::new(LossKind::Wasserstein2, 1)).is_err());
        let zero = SpectralModel::new(vec![0.0], vec![0.0], "m").unwrap();
        assert!(optimize_schedule(&zero, &OptimizeConfig::new(LossKind::Wasserstein2, 4)).is_err());
    }

    #[test]
    fn two_step_problem_improves_and_stays_feasible() {
        let m = SpectralModel::new(vec![1.0, 0.2], vec![0.3, 0.0], "m").unwrap();
        let cfg = OptimizeConfig::new(LossKind::Wasserstein2, 2);
        let (s, r) = optimize_schedule(&m, &cfg).unwrap();
        s.validate().unwrap();
        assert!(r.final_loss <= r.initial_loss);
        assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
