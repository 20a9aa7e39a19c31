mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use specsched::estimate::symmetric_eigen;
use specsched::rng::CounterRng;
use specsched::schedules::{cosine_schedule, linear_schedule, Endpoints};
use specsched::spectral::*;
use specsched::losses::w2_loss;
use specsched::{Process, Schedule, SpectralModel, VeSchedule};

const ENDS: Endpoints = Endpoints { eps0: 1e-4, eps_s: 4e-5 };

/// Posterior mean by conditioning the joint Gaussian of `(x0, xt)` with
/// `xt = sqrt(a) x0 + sqrt(1 - a) e`, done with a generic dense solve.
fn conditional_mean(sigma: &DMatrix<f64>, mu: &DVector<f64>, a: f64, xt: &DVector<f64>) -> DVector<f64> {
    let d = mu.len();
    let cross = sigma * a.sqrt();
    let cov_t = sigma * a + DMatrix::identity(d, d) * (1.0 - a);
    let inv = cov_t.try_inverse().unwrap();
    mu + cross * inv * (xt - mu * a.sqrt())
}

#[test]
fn wiener_matches_gaussian_conditioning_in_the_eigenbasis() {
    let m = SpectralModel::new(vec![2.0, 0.5], vec![1.0, 0.0], "ex").unwrap();
    let got = wiener_denoise(&m, 0.5, &[1.0, 1.0]).unwrap();
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
    let want = conditional_mean(&sigma, &DVector::from_vec(vec![1.0, 0.0]), 0.5, &DVector::from_vec(vec![1.0, 1.0]));
    assert!(max_abs_diff(&got, want.as_slice()) < 1e-14);
    // Frozen from an independent high-precision evaluation.
    assert!(max_abs_diff(&got, &[1.2761423749153966, 0.4714045207910317]) < 1e-14);
}

#[test]
fn wiener_matches_conditioning_for_rotated_covariances() {
    let mut rng = CounterRng::new(42, 0);
    for d in [2usize, 4, 7] {
        let sigma = random_psd(&mut rng, d, d);
        let mu = random_vector(&mut rng, d);
        let xt = random_vector(&mut rng, d);
        let (lam, u) = symmetric_eigen(&sigma).unwrap();
        let model = SpectralModel::new(lam.iter().map(|l| l.max(0.0)).collect(), (u.transpose() * &mu).as_slice().to_vec(), "r").unwrap();
        for a in [0.05, 0.5, 0.97] {
            let v = u.transpose() * &xt;
            let got = u.clone() * DVector::from_vec(wiener_denoise(&model, a, v.as_slice()).unwrap());
            let want = conditional_mean(&sigma, &mu, a, &xt);
            assert!((got - want).amax() < 1e-10);
        }
    }
}

#[test]
fn ddim_step_agrees_with_time_domain_update() {
    // One DDIM update x_{s-1} = sqrt(a_prev) x0 + sqrt(1 - a_prev) eps_hat
    // with eps_hat recovered from the Wiener estimate.
    let (p, c) = (0.75, 0.25);
    let (a, b) = ddim_gains(p, c).unwrap();
    let m = SpectralModel::new(vec![1.7], vec![0.3], "s").unwrap();
    let x = 0.8;
    let x0 = wiener_denoise(&m, c, &[x]).unwrap()[0];
    let eps = (x - c.sqrt() * x0) / (1.0 - c).sqrt();
    let direct = p.sqrt() * x0 + (1.0 - p).sqrt() * eps;
    assert!((a * x + b * x0 - direct).abs() < 1e-14);
}

#[test]
fn spectral_transfer_matches_dense_time_domain_composition() {
    let mut rng = CounterRng::new(7, 1);
    for d in [3usize, 6, 8] {
        let sigma = random_psd(&mut rng, d, d - 1);
        let mu = random_vector(&mut rng, d);
        let (lam, u) = symmetric_eigen(&sigma).unwrap();
        let model = SpectralModel::new(lam.iter().map(|l| l.max(0.0)).collect(), (u.transpose() * &mu).as_slice().to_vec(), "r").unwrap();
        let sched = cosine_schedule(9, 0.0, 1.0, 1.0, ENDS).unwrap();
        let t = ddim_transfer(&model, &sched).unwrap();
        let mut gain = DMatrix::<f64>::identity(d, d);
        let mut off = DVector::<f64>::zeros(d);
        for s in (1..=9).rev() {
            let (p, c) = (sched.alpha_bar[s - 1], sched.alpha_bar[s]);
            let (a, b) = ddim_gains(p, c).unwrap();
            let inv = (&sigma * c + DMatrix::identity(d, d) * (1.0 - c)).try_inverse().unwrap();
            let k = &inv * &sigma * c.sqrt();
            let kc = &inv * &mu * (1.0 - c);
            let step = DMatrix::identity(d, d) * a + k * b;
            off = &step * off + kc * b;
            gain = step * gain;
        }
        let proj = u.transpose() * &gain * &u;
        let want = DMatrix::from_diagonal(&DVector::from_vec(t.d1.clone()));
        assert!((proj - want).amax() < 1e-10, "d = {d}");
        let off_want = &u * DMatrix::from_diagonal(&DVector::from_vec(t.d2.clone())) * u.transpose() * &mu;
        assert!((off - off_want).amax() < 1e-10);
    }
}

#[test]
fn fine_cosine_schedule_nearly_recovers_unit_eigenvalues() {
    let m = SpectralModel::new(vec![1.0; 3], vec![0.5, 0.0, -1.0], "iso").unwrap();
    let t = ddim_transfer(&m, &cosine_schedule(1000, 0.0, 1.0, 1.0, ENDS).unwrap()).unwrap();
    for i in 0..3 {
        assert!((t.d1[i] - 1.0).abs() < 0.01 && (t.d2[i] - 1.0).abs() < 0.01, "{t:?}");
    }
}

#[test]
fn ddpm_two_step_scalar_case() {
    let m = SpectralModel::new(vec![1.0], vec![2.0], "s").unwrap();
    let s = Schedule::new("custom", vec![0.9999, 0.5, 4e-5], 1e-4, 4e-5).unwrap();
    let t = ddpm_transfer(&m, &s).unwrap();
    // Frozen from a 40-digit evaluation of the two scalar steps.
    assert!((t.d1[0] - 0.0063248715718218345).abs() < 1e-15);
    assert!((t.d2[0] - 0.9999099967497875).abs() < 1e-15);
    assert!((t.var_extra[0] - 0.2501149910990939).abs() < 1e-15);
    let out = output_distribution(&t, &m).unwrap();
    assert!((out.variance[0] - (t.d1[0].powi(2) + t.var_extra[0])).abs() < 1e-16);
    assert!((out.mean[0] - 2.0 * t.d2[0]).abs() < 1e-15);
}

#[test]
fn ddpm_flat_step_adds_no_variance() {
    let m = SpectralModel::new(vec![0.7], vec![0.0], "s").unwrap();
    let a = Schedule::new("custom", vec![0.9999, 0.5, 4e-5], 1e-4, 4e-5).unwrap();
    let b = Schedule::new("custom", vec![0.9999, 0.5, 0.5, 4e-5], 1e-4, 4e-5).unwrap();
    let ta = ddpm_transfer(&m, &a).unwrap();
    let tb = ddpm_transfer(&m, &b).unwrap();
    assert!((ta.var_extra[0] - tb.var_extra[0]).abs() < 1e-15);
    assert!((ta.d1[0] - tb.d1[0]).abs() < 1e-15);
}

#[test]
fn ddim_transfer_has_no_extra_variance_and_positive_gains() {
    let (_, m) = reference_model();
    for s in [1usize, 10, 112] {
        let t = ddim_transfer(&m, &linear_schedule(s, ENDS).unwrap()).unwrap();
        assert!(t.var_extra.iter().all(|&v| v == 0.0));
        assert!(t.d1.iter().all(|&g| g > 0.0));
        let out = output_distribution(&t, &m).unwrap();
        assert_eq!(out.variance, t.d1.iter().map(|g| g * g).collect::<Vec<_>>());
    }
}

#[test]
fn more_steps_reduce_w2_for_cosine() {
    let (_, m) = reference_model();
    let w = |s| w2_loss(&m, &ddim_transfer(&m, &cosine_schedule(s, 0.0, 1.0, 1.0, ENDS).unwrap()).unwrap()).unwrap();
    assert!(w(334) < w(10));
}

#[test]
fn vp_ve_gain_relations_hold_stepwise() {
    let sched = cosine_schedule(60, 0.0, 1.0, 1.0, ENDS).unwrap();
    let ve = vp_to_ve(&sched).unwrap();
    for lam in [0.0, 0.01, 1.0, 37.0] {
        for s in 1..=60 {
            let (p, c) = (sched.alpha_bar[s - 1], sched.alpha_bar[s]);
            let (gv, mv) = vp_step(p, c, lam);
            let (ge, me) = ve_step(ve.sigma[s - 1], ve.sigma[s], lam);
            assert!((gv - (p / c).sqrt() * ge).abs() < 1e-10);
            assert!((mv - p.sqrt() * me).abs() < 1e-10);
        }
    }
}

#[test]
fn ve_transfer_is_vp_transfer_rescaled() {
    let (_, m) = reference_model();
    let sched = linear_schedule(40, ENDS).unwrap();
    let vp = ddim_transfer(&m, &sched).unwrap();
    let ve = ve_ddim_transfer(&m, &vp_to_ve(&sched).unwrap()).unwrap();
    let k = sched.alpha_bar[0].sqrt();
    for i in 0..m.dim {
        assert!((vp.d1[i] - k * ve.d1[i]).abs() < 1e-12);
        assert!((vp.d2[i] - k * ve.d2[i]).abs() < 1e-12);
    }
}

#[test]
fn vp_ve_round_trip() {
    let sched = cosine_schedule(28, 0.0, 1.0, 1.0, ENDS).unwrap();
    let back = ve_to_vp(&vp_to_ve(&sched).unwrap()).unwrap();
    assert!(max_abs_diff(&back.alpha_bar, &sched.alpha_bar) <= 1e-12);
    let ve = VeSchedule { steps: 2, sigma: vec![0.01, 1.0, 1.0] };
    let t = ve_ddim_transfer(&SpectralModel::new(vec![2.0], vec![1.0], "x").unwrap(), &ve).unwrap();
    assert!(t.d1[0].is_finite());
}

#[test]
fn joint_transfer_dispatch() {
    let (_, m) = reference_model();
    let s = linear_schedule(12, ENDS).unwrap();
    assert_eq!(transfer(&m, &s, Process::Ddpm).unwrap(), ddpm_transfer(&m, &s).unwrap());
    let bad = Schedule { alpha_bar: vec![0.9999, 0.3, 0.6, 4e-5], steps: 3, ..s };
    assert!(ddim_transfer(&m, &bad).is_err());
}
