//! Distances between the generated Gaussian and the target, and their
//! gradients with respect to the interior schedule values.

use serde::{Deserialize, Serialize};

use crate::dual::Dual2;
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{Process, Schedule, SpectralModel, Transfer, LAMBDA_FLOOR};
use crate::spectral::{step_terms, transfer_raw};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared 2-Wasserstein distance.
    Wasserstein2,
    /// `KL(target || generated)`.
    Kl,
    WeightedL1,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Wasserstein2, LossKind::Kl, LossKind::WeightedL1];

    pub fn flag(self) -> &'static str {
        match self {
            LossKind::Wasserstein2 => "w2",
            LossKind::Kl => "kl",
            LossKind::WeightedL1 => "wl1",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w2" => Ok(LossKind::Wasserstein2),
            "kl" => Ok(LossKind::Kl),
            "wl1" => Ok(LossKind::WeightedL1),
            _ => Err(invalid(format!("unknown loss '{s}' (expected w2, kl or wl1)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.flag())
    }
}

/// Model-dependent constants of a loss, computed once per model.
#[derive(Clone, Debug)]
pub(crate) struct LossContext<'a> {
    kind: LossKind,
    model: &'a SpectralModel,
    lambda_sum: f64,
    mu2_sum: f64,
}

impl<'a> LossContext<'a> {
    pub fn new(kind: LossKind, model: &'a SpectralModel) -> Result<Self> {
        model.validate()?;
        let lambda_sum: f64 = model.eigenvalues.iter().sum();
        let mu2_sum: f64 = model.mean_spectral.iter().map(|m| m * m).sum();
        match kind {
            LossKind::Kl if !model.eigenvalues.iter().any(|&l| l >= LAMBDA_FLOOR) => {
                return Err(invalid("every eigenvalue is below the floor; KL is undefined"));
            }
            LossKind::WeightedL1 if lambda_sum <= 0.0 => {
                return Err(invalid("weighted L1 needs a positive eigenvalue"));
            }
            _ => {}
        }
        Ok(LossContext { kind, model, lambda_sum, mu2_sum })
    }

    /// Loss contribution of coordinate `i` and its partials with respect to
    /// `(D1, D2, var_extra)`.
    #[inline]
    pub fn coord(&self, i: usize, d1: f64, d2: f64, v: f64) -> (f64, f64, f64, f64) {
        let lam = self.model.eigenvalues[i];
        let mu = self.model.mean_spectral[i];
        let var = d1 * d1 + v;
        match self.kind {
            LossKind::Wasserstein2 => {
                let sd = var.sqrt();
                let r = lam.sqrt() - sd;
                let val = r * r + mu * mu * (d2 - 1.0) * (d2 - 1.0);
                let (gd1, gv) = if sd > 0.0 { (-2.0 * r * d1 / sd, -r / sd) } else { (0.0, 0.0) };
                (val, gd1, 2.0 * mu * mu * (d2 - 1.0), gv)
            }
            LossKind::Kl => {
                if lam < LAMBDA_FLOOR {
                    return (0.0, 0.0, 0.0, 0.0);
                }
                if !(var > 0.0) {
                    return (f64::INFINITY, 0.0, 0.0, 0.0);
                }
                let q = lam + (d2 - 1.0) * (d2 - 1.0) * mu * mu;
                let val = 0.5 * (var.ln() - lam.ln() - 1.0 + q / var);
                let gvar = 0.5 * (1.0 / var - q / (var * var));
                (val, gvar * 2.0 * d1, (d2 - 1.0) * mu * mu / var, gvar)
            }
            LossKind::WeightedL1 => {
                let w = lam / self.lambda_sum;
                let diff = var - lam;
                let mut val = w * diff.abs();
                let gvar = w * diff.signum();
                let mut gd2 = 0.0;
                if self.mu2_sum > 0.0 {
                    let wm = mu * mu / self.mu2_sum;
                    val += wm * (d2 - 1.0) * (d2 - 1.0);
                    gd2 = 2.0 * wm * (d2 - 1.0);
                }
                (val, gvar * 2.0 * d1, gd2, gvar)
            }
        }
    }

    pub fn evaluate(&self, d1: &[f64], d2: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..d1.len() {
            total += self.coord(i, d1[i], d2[i], v[i]).0;
        }
        if total.is_nan() {
            f64::INFINITY
        } else {
            total
        }
    }

    /// Loss for a raw schedule vector; infinite where undefined.
    pub fn objective(&self, alpha_bar: &[f64], process: Process) -> f64 {
        let (d1, d2, v) = transfer_raw(&self.model.eigenvalues, alpha_bar, process);
        if v.iter().any(|&x| x < 0.0) {
            return f64::INFINITY;
        }
        self.evaluate(&d1, &d2, &v)
    }

    /// Loss and its exact gradient with respect to every entry of
    /// `alpha_bar`, by reverse accumulation through the step recursion.
    pub fn objective_grad(&self, alpha_bar: &[f64], process: Process) -> (f64, Vec<f64>) {
        let n = alpha_bar.len() - 1;
        let mut grad = vec![0.0; n + 1];
        let mut g = vec![Dual2::var_p(0.0); n];
        let mut m = g.clone();
        let mut c2 = g.clone();
        let mut prefix = vec![0.0; n + 1];
        let mut total = 0.0;
        for i in 0..self.model.dim {
            let lam = self.model.eigenvalues[i];
            for s in 0..n {
                let p = Dual2::var_p(alpha_bar[s]);
                let c = Dual2::var_c(alpha_bar[s + 1]);
                let (gs, ms, cs) = step_terms(p, c, lam, process);
                g[s] = gs;
                m[s] = ms;
                c2[s] = cs;
            }
            prefix[0] = 1.0;
            let (mut d2, mut v) = (0.0, 0.0);
            for s in 0..n {
                if c2[s].v < 0.0 {
                    return (f64::INFINITY, grad);
                }
                d2 += prefix[s] * m[s].v;
                v += prefix[s] * prefix[s] * c2[s].v;
                prefix[s + 1] = prefix[s] * g[s].v;
            }
            let (val, gd1, gd2, gv) = self.coord(i, prefix[n], d2, v);
            total += val;
            if gd1 == 0.0 && gd2 == 0.0 && gv == 0.0 {
                continue;
            }
            // Suffix quantities over steps after s: product of gains, the
            // mean injection and the injected variance they propagate.
            let (mut q, mut r, mut t) = (1.0, 0.0, 0.0);
            for s in (0..n).rev() {
                let ps = prefix[s];
                let dg = gd1 * ps * q + gd2 * ps * r + gv * 2.0 * ps * ps * g[s].v * t;
                let dm = gd2 * ps;
                let dc = gv * ps * ps;
                grad[s] += dg * g[s].dp + dm * m[s].dp + dc * c2[s].dp;
                grad[s + 1] += dg * g[s].dc + dm * m[s].dc + dc * c2[s].dc;
                r = m[s].v + g[s].v * r;
                t = c2[s].v + g[s].v * g[s].v * t;
                q *= g[s].v;
            }
        }
        if total.is_nan() {
            total = f64::INFINITY;
        }
        (total, grad)
    }
}

fn evaluate(kind: LossKind, model: &SpectralModel, transfer: &Transfer) -> Result<f64> {
    check_dim(model.dim, transfer.dim())?;
    check_dim(model.dim, transfer.d2.len())?;
    check_dim(model.dim, transfer.var_extra.len())?;
    let ctx = LossContext::new(kind, model)?;
    if kind == LossKind::Kl {
        let bad = (0..model.dim)
            .any(|i| model.eigenvalues[i] >= LAMBDA_FLOOR && !(transfer.d1[i] * transfer.d1[i] + transfer.var_extra[i] > 0.0));
        if bad {
            return Err(Error::Numerical("generated variance is zero on a retained coordinate".into()));
        }
    }
    Ok(ctx.evaluate(&transfer.d1, &transfer.d2, &transfer.var_extra))
}

/// Squared 2-Wasserstein distance between target and generated Gaussians.
pub fn w2_loss(model: &SpectralModel, transfer: &Transfer) -> Result<f64> {
    evaluate(LossKind::Wasserstein2, model, transfer)
}

/// `KL(target || generated)` over coordinates with eigenvalue at or above
/// [`LAMBDA_FLOOR`](crate::LAMBDA_FLOOR).
pub fn kl_loss(model: &SpectralModel, transfer: &Transfer) -> Result<f64> {
    evaluate(LossKind::Kl, model, transfer)
}

/// Eigenvalue-weighted L1 mismatch of the variances plus a mean-weighted
/// squared gain error (dropped when the mean is zero).
pub fn weighted_l1_loss(model: &SpectralModel, transfer: &Transfer) -> Result<f64> {
    evaluate(LossKind::WeightedL1, model, transfer)
}

pub fn loss(kind: LossKind, model: &SpectralModel, transfer: &Transfer) -> Result<f64> {
    evaluate(kind, model, transfer)
}

/// Default relative finite-difference step.
pub const FD_STEP: f64 = 1e-7;

/// Central finite-difference gradient with respect to the interior values
/// `alpha_bar[1..S]`.
pub fn loss_gradient(model: &SpectralModel, schedule: &Schedule, kind: LossKind, process: Process) -> Result<Vec<f64>> {
    loss_gradient_with_step(model, schedule, kind, process, FD_STEP)
}

/// [`loss_gradient`] with a custom relative step. Steps are clipped so the
/// perturbed value stays strictly between its neighbours; where a neighbour
/// coincides the difference becomes one-sided.
pub fn loss_gradient_with_step(
    model: &SpectralModel,
    schedule: &Schedule,
    kind: LossKind,
    process: Process,
    rel_step: f64,
) -> Result<Vec<f64>> {
    schedule.validate_box()?;
    if !(rel_step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let ctx = LossContext::new(kind, model)?;
    let ab = &schedule.alpha_bar;
    let n = schedule.steps;
    let grads: Vec<f64> = (1..n)
        .map(|s| {
            let x = ab[s];
            let h = rel_step * x.abs().max(1.0);
            let up = ab[s - 1] - x;
            let down = x - ab[s + 1];
            let mut work = ab.clone();
            let mut eval = |v: f64| {
                work[s] = v;
                ctx.objective(&work, process)
            };
            if up > 0.0 && down > 0.0 {
                let h = h.min(0.5 * up).min(0.5 * down);
                (eval(x + h) - eval(x - h)) / (2.0 * h)
            } else if up > 0.0 {
                let h = h.min(0.5 * up);
                (eval(x + h) - eval(x)) / h
            } else if down > 0.0 {
                let h = h.min(0.5 * down);
                (eval(x) - eval(x - h)) / h
            } else {
                (eval(x + h) - eval(x - h)) / (2.0 * h)
            }
        })
        .collect();
    Ok(grads)
}

/// Exact gradient with respect to the interior values, computed by reverse
/// accumulation. Agrees with [`loss_gradient`] to finite-difference accuracy.
pub fn analytic_gradient(model: &SpectralModel, schedule: &Schedule, kind: LossKind, process: Process) -> Result<Vec<f64>> {
    schedule.validate_box()?;
    let ctx = LossContext::new(kind, model)?;
    let (_, g) = ctx.objective_grad(&schedule.alpha_bar, process);
    Ok(g[1..schedule.steps].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Formulation;

    fn tr(d1: &[f64], d2: &[f64]) -> Transfer {
        Transfer {
            d1: d1.to_vec(),
            d2: d2.to_vec(),
            var_extra: vec![0.0; d1.len()],
            process: Process::Ddim,
            formulation: Formulation::Vp,
        }
    }

    fn m(l: &[f64], mu: &[f64]) -> SpectralModel {
        SpectralModel::new(l.to_vec(), mu.to_vec(), "t").unwrap()
    }

    #[test]
    fn matched_transfer_has_zero_loss() {
        let model = m(&[4.0, 0.25, 1.0], &[1.0, -2.0, 0.5]);
        let t = tr(&[2.0, 0.5, 1.0], &[1.0, 1.0, 1.0]);
        for kind in LossKind::ALL {
            assert_eq!(loss(kind, &model, &t).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn scalar_examples() {
        let t = tr(&[1.0], &[1.0]);
        assert_eq!(w2_loss(&m(&[4.0], &[0.0]), &t).unwrap(), 1.0);
        // KL(N(0,1) || N(0,4)) = (ln 4 - 1 + 1/4) / 2.
        let kl = kl_loss(&m(&[1.0], &[0.0]), &tr(&[2.0], &[1.0])).unwrap();
        assert!((kl - 0.3181471805599453).abs() < 1e-15);
        let wl = weighted_l1_loss(&m(&[3.0, 1.0], &[0.0, 0.0]), &tr(&[3f64.sqrt(), 2f64.sqrt()], &[1.0, 1.0])).unwrap();
        assert!((wl - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_errors() {
        let t = tr(&[1.0, 1.0], &[1.0, 1.0]);
        assert!(kl_loss(&m(&[0.0, 1e-13], &[0.0, 0.0]), &t).is_err());
        assert!(weighted_l1_loss(&m(&[0.0, 0.0], &[1.0, 0.0]), &t).is_err());
        assert!(w2_loss(&m(&[1.0], &[0.0]), &t).is_err());
        assert!(kl_loss(&m(&[1.0, 1.0], &[0.0, 0.0]), &tr(&[0.0, 1.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn kl_skips_floored_coordinates() {
        let a = kl_loss(&m(&[1.0, 0.0], &[0.0, 5.0]), &tr(&[2.0, 0.3], &[1.0, 0.2])).unwrap();
        let b = kl_loss(&m(&[1.0], &[0.0]), &tr(&[2.0], &[1.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_objective_has_zero_gradient() {
        // A zero eigenvalue with zero mean contributes a schedule-independent
        // constant to W2.
        let model = m(&[0.0], &[0.0]);
        let s = crate::schedules::linear_schedule(12, Default::default()).unwrap();
        let g = loss_gradient(&model, &s, LossKind::Wasserstein2, Process::Ddim).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-7), "{g:?}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let model = m(&[2.5, 0.7, 0.05, 0.0, 1.3], &[0.4, 0.0, -0.2, 0.35, 0.1]);
        let s = crate::schedules::cosine_schedule(15, 0.0, 1.0, 1.0, Default::default()).unwrap();
        for process in [Process::Ddim, Process::Ddpm] {
            for kind in [LossKind::Wasserstein2, LossKind::Kl] {
                let fd = loss_gradient_with_step(&model, &s, kind, process, 1e-6).unwrap();
                let an = analytic_gradient(&model, &s, kind, process).unwrap();
                let scale = fd.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                for (a, b) in fd.iter().zip(&an) {
                    assert!((a - b).abs() <= 1e-6 * scale, "{kind} {process}: fd {a} vs analytic {b}");
                }
            }
        }
    }
}
