//! Subcommand implementations. Each stages its files in [`Outputs`] and
//! returns a one-line JSON summary for stdout.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use specsched::estimate::{self, EstimationConfig, Structure};
use specsched::io::{encode_raw, fmt_f64, parse_csv_signal, parse_raw, parse_wav, write_csv_rows};
use specsched::losses::{loss, LossKind};
use specsched::optimize::{optimize_schedule, GradientMethod, Init, Mode, OptimizeConfig};
use specsched::schedules::{self, Endpoints};
use specsched::simulate::{self, DenseGaussian, SimConfig};
use specsched::spectral;
use specsched::{Process, Schedule, SpectralModel, VeSchedule};

use crate::output::{read_bytes, read_text, usage, CliResult, Outputs};
use crate::{
    BiasArgs, CompareArgs, ConvertArgs, DynamicsArgs, EstimateArgs, EvalArgs, GenArgs, OptimizeArgs, SimulateArgs,
    TargetSource,
};

/// Dense Gaussian target as stored on disk.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TargetFile {
    fn from_dense(g: &DenseGaussian) -> Self {
        TargetFile {
            mean: g.mean.iter().copied().collect(),
            covariance: g.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    fn into_dense(self) -> CliResult<DenseGaussian> {
        let d = self.mean.len();
        if self.covariance.len() != d || self.covariance.iter().any(|r| r.len() != d) {
            return Err(usage(format!("target covariance must be {d} x {d}")));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.covariance[i][j]);
        Ok(DenseGaussian::new(DVector::from_vec(self.mean), cov)?)
    }
}

fn ends(e: &crate::Endpoints) -> Endpoints {
    Endpoints { eps0: e.eps0, eps_s: e.eps_s }
}

fn parse_list(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("'{t}' is not a number in '{text}'"))))
        .collect()
}

fn parse_synthetic(text: &str) -> CliResult<(usize, f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [d, l, mu] => {
            let d = d.parse().map_err(|_| usage(format!("synthetic dimension '{d}' is not an integer")))?;
            let v = parse_list(&format!("{l},{mu}"))?;
            Ok((d, v[0], v[1]))
        }
        _ => Err(usage(format!("--synthetic expects d,l,mu, got '{text}'"))),
    }
}

fn family_schedule(family: &str, params: Option<&[f64]>, steps: usize, e: Endpoints) -> CliResult<Schedule> {
    let want = |n: usize, default: [f64; 3]| -> CliResult<[f64; 3]> {
        match params {
            None => Ok(default),
            Some(p) if p.len() == n => Ok([p[0], p[1], p[2]]),
            Some(p) => Err(usage(format!("{family} takes {n} parameters, got {}", p.len()))),
        }
    };
    let s = match family {
        "linear" => {
            if params.is_some_and(|p| !p.is_empty()) {
                return Err(usage("linear takes no parameters"));
            }
            schedules::linear_schedule(steps, e)?
        }
        "cosine" => {
            let [s, en, tau] = want(3, [0.0, 1.0, 1.0])?;
            schedules::cosine_schedule(steps, s, en, tau, e)?
        }
        "sigmoid" => {
            let [s, en, tau] = want(3, [-3.0, 3.0, 1.0])?;
            schedules::sigmoid_schedule(steps, s, en, tau, e)?
        }
        "edm" => {
            let [rho, lo, hi] = want(3, [7.0, 0.002, 80.0])?;
            schedules::edm_schedule(steps, rho, lo, hi, e)?
        }
        other => return Err(usage(format!("unknown family '{other}' (expected linear, cosine, sigmoid or edm)"))),
    };
    Ok(s)
}

fn load_model(path: &Path, out: &mut Outputs) -> CliResult<SpectralModel> {
    out.input(path);
    SpectralModel::from_json(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_schedule(path: &Path, out: &mut Outputs) -> CliResult<Schedule> {
    out.input(path);
    Schedule::from_json(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn parse_all<T: std::str::FromStr<Err = specsched::Error>>(items: &[String]) -> CliResult<Vec<T>> {
    items.iter().map(|s| s.trim().parse::<T>().map_err(Into::into)).collect()
}

/// Loss value for a table row, with the optional square root for W2.
fn loss_row(kind: LossKind, root: bool, model: &SpectralModel, s: &Schedule, p: Process) -> CliResult<(String, f64)> {
    let v = loss(kind, model, &spectral::transfer(model, s, p)?)?;
    Ok(if root && kind == LossKind::Wasserstein2 { ("w2_root".into(), v.sqrt()) } else { (kind.to_string(), v) })
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn gen(a: &GenArgs, out: &mut Outputs) -> CliResult<String> {
    let params = a.params.as_deref().map(parse_list).transpose()?;
    let s = family_schedule(&a.family, params.as_deref(), a.steps, ends(&a.ends))?;
    out.add(&a.out, s.to_json());
    Ok(json!({ "kind": s.kind, "steps": s.steps }).to_string())
}

fn parse_init(text: &str, steps: usize, seed: u64, out: &mut Outputs) -> CliResult<Init> {
    Ok(match text.split_once(':') {
        None if text == "linear" => Init::Linear,
        None if text == "cosine" => Init::Cosine,
        None if text == "random" => Init::UniformRandom(seed),
        Some(("random", n)) => Init::UniformRandom(n.parse().map_err(|_| usage(format!("bad random seed '{n}'")))?),
        Some(("warm", path)) => {
            let prev = load_schedule(Path::new(path), out)?;
            Init::WarmStart(schedules::warm_start_interpolate(&prev, steps)?)
        }
        _ => return Err(usage(format!("unknown init '{text}' (expected linear, cosine, random[:SEED] or warm:PATH)"))),
    })
}

pub fn optimize(a: &OptimizeArgs, seed: u64, out: &mut Outputs) -> CliResult<String> {
    let model = load_model(&a.model, out)?;
    let mut cfg = OptimizeConfig::new(a.loss.parse()?, a.steps);
    cfg.process = a.process.parse()?;
    cfg.mode = match a.mode.as_str() {
        "constrained" => Mode::Constrained,
        "free" => Mode::Free,
        m => return Err(usage(format!("unknown mode '{m}' (expected constrained or free)"))),
    };
    cfg.gradient = match a.gradient.as_str() {
        "analytic" => GradientMethod::Analytic,
        "fd" => GradientMethod::FiniteDifference,
        g => return Err(usage(format!("unknown gradient '{g}' (expected analytic or fd)"))),
    };
    cfg.eps0 = a.ends.eps0;
    cfg.eps_s = a.ends.eps_s;
    cfg.max_iter = a.max_iter;
    cfg.ftol = a.ftol;
    cfg.gtol = a.gtol;
    cfg.single_eigenvalue_index = a.single_eigenvalue;
    cfg.validate()?;
    cfg.init = parse_init(&a.init, a.steps, seed, out)?;
    let (schedule, report) = optimize_schedule(&model, &cfg)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("report.json"));
    out.add(&a.out, schedule.to_json());
    out.add(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(json!({
        "final_loss": report.final_loss,
        "initial_loss": report.initial_loss,
        "objective_evals": report.objective_evals,
        "converged": report.converged,
    })
    .to_string())
}

pub fn eval(a: &EvalArgs, out: &mut Outputs) -> CliResult<String> {
    let model = load_model(&a.model, out)?;
    let kinds: Vec<LossKind> = parse_all(&a.losses)?;
    let procs: Vec<Process> = parse_all(&a.processes)?;
    let mut rows = Vec::new();
    for path in &a.schedules {
        let s = load_schedule(path, out)?;
        for &p in &procs {
            for &k in &kinds {
                let (name, v) = loss_row(k, a.root, &model, &s, p)?;
                rows.push(vec![path.display().to_string(), s.kind.clone(), s.steps.to_string(), p.to_string(), name, fmt_f64(v)]);
            }
        }
    }
    out.add(&a.out, csv_table(&["file", "schedule", "steps", "process", "loss_kind", "value"], &rows));
    Ok(json!({ "rows": rows.len() }).to_string())
}

enum Spec {
    Family(String, Option<Vec<f64>>),
    Optimized,
    File(PathBuf),
}

fn parse_spec(text: &str) -> CliResult<Spec> {
    Ok(match text.split_once(':') {
        None if text == "optimized" => Spec::Optimized,
        None => Spec::Family(text.to_string(), None),
        Some(("file", p)) => Spec::File(PathBuf::from(p)),
        Some((fam, params)) => Spec::Family(fam.to_string(), Some(parse_list(params)?)),
    })
}

const DEFAULT_COMPARE: [&str; 7] =
    ["linear", "cosine:0,1,1", "cosine:0,0.5,1", "sigmoid:-3,3,1", "sigmoid:0,3,0.7", "edm:7,0.002,80", "optimized"];

pub fn compare(a: &CompareArgs, out: &mut Outputs) -> CliResult<String> {
    let model = load_model(&a.model, out)?;
    let kinds: Vec<LossKind> = parse_all(&a.losses)?;
    let procs: Vec<Process> = parse_all(&a.processes)?;
    let labels: Vec<String> = if a.schedules.is_empty() {
        DEFAULT_COMPARE.iter().map(|s| s.to_string()).collect()
    } else {
        a.schedules.clone()
    };
    let specs: Vec<Spec> = labels.iter().map(|s| parse_spec(s)).collect::<CliResult<_>>()?;
    if a.steps_list.is_empty() {
        return Err(usage("--steps-list is empty"));
    }
    let e = ends(&a.ends);
    let mut rows = Vec::new();
    let mut push = |steps: usize, label: &str, p: Process, k: LossKind, s: &Schedule| -> CliResult<()> {
        let (name, v) = loss_row(k, a.root, &model, s, p)?;
        rows.push(vec![steps.to_string(), label.to_string(), p.to_string(), name, fmt_f64(v)]);
        Ok(())
    };
    // File schedules keep their own step count and are listed once.
    for (label, spec) in labels.iter().zip(&specs) {
        if let Spec::File(path) = spec {
            let s = load_schedule(path, out)?;
            for &p in &procs {
                for &k in &kinds {
                    push(s.steps, label, p, k, &s)?;
                }
            }
        }
    }
    for &steps in &a.steps_list {
        for (label, spec) in labels.iter().zip(&specs) {
            match spec {
                Spec::File(_) => {}
                Spec::Family(f, params) => {
                    let s = family_schedule(f, params.as_deref(), steps, e)?;
                    for &p in &procs {
                        for &k in &kinds {
                            push(steps, label, p, k, &s)?;
                        }
                    }
                }
                Spec::Optimized => {
                    for &p in &procs {
                        for &k in &kinds {
                            let mut cfg = OptimizeConfig::new(k, steps);
                            cfg.process = p;
                            cfg.eps0 = e.eps0;
                            cfg.eps_s = e.eps_s;
                            let (s, _) = optimize_schedule(&model, &cfg)?;
                            push(steps, label, p, k, &s)?;
                        }
                    }
                }
            }
        }
    }
    out.add(&a.out, csv_table(&["steps", "schedule", "process", "loss_kind", "value"], &rows));
    Ok(json!({ "rows": rows.len() }).to_string())
}

fn load_target(src: &TargetSource, out: &mut Outputs) -> CliResult<DenseGaussian> {
    match (&src.target, &src.synthetic) {
        (Some(path), None) => {
            out.input(path);
            let t: TargetFile =
                serde_json::from_str(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            t.into_dense()
        }
        (None, Some(spec)) => {
            let (d, l, mu) = parse_synthetic(spec)?;
            Ok(estimate::synthetic_circulant_model(d, l, mu)?.0)
        }
        _ => Err(usage("give exactly one of --target or --synthetic")),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn simulate(a: &SimulateArgs, seed: u64, out: &mut Outputs) -> CliResult<String> {
    let target = load_target(&a.source, out)?;
    let schedule = load_schedule(&a.schedule, out)?;
    let process: Process = a.process.parse()?;
    if a.format != "csv" && a.format != "raw" {
        return Err(usage(format!("unknown format '{}' (expected csv or raw)", a.format)));
    }
    let cfg = SimConfig { process, samples: a.samples, seed, schedule };
    let samples = simulate::simulate_reverse(&target, &cfg)?;
    let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
    if a.format == "csv" {
        out.add(&a.out, write_csv_rows(None, rows.iter()));
    } else {
        let (bytes, side) = encode_raw(&rows.concat(), target.dim());
        out.add(&a.out, bytes);
        out.add(&with_suffix(&a.out, ".sidecar.json"), side);
    }
    if let Some(path) = &a.moments {
        let m = simulate::empirical_moments(&samples)?;
        out.add(path, serde_json::to_string_pretty(&TargetFile::from_dense(&m)).expect("moments serialize"));
    }
    Ok(json!({ "samples": a.samples, "dim": target.dim(), "seed": seed }).to_string())
}

pub fn dynamics(a: &DynamicsArgs, out: &mut Outputs) -> CliResult<String> {
    let model = load_model(&a.model, out)?;
    let schedule = load_schedule(&a.schedule, out)?;
    let rel = simulate::relative_error_dynamics(&model, &schedule)?;
    let w2 = simulate::w2_dynamics(&model, &schedule)?;
    let mut header: Vec<String> = vec!["step".into(), "w2".into()];
    header.extend((0..model.dim).map(|i| format!("rel_err_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = rel
        .iter()
        .zip(&w2)
        .enumerate()
        .map(|(l, (r, w))| {
            let mut row = vec![l.to_string(), fmt_f64(*w)];
            row.extend(r.iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    out.add(&a.out, csv_table(&header, &rows));
    Ok(json!({ "final_w2": w2[0], "initial_w2": w2[schedule.steps] }).to_string())
}

pub fn bias(a: &BiasArgs, out: &mut Outputs) -> CliResult<String> {
    let model = load_model(&a.model, out)?;
    let schedule = load_schedule(&a.schedule, out)?;
    let t = spectral::transfer(&model, &schedule, a.process.parse()?)?;
    let b = spectral::mean_bias(&t, &model)?;
    let rows: Vec<Vec<String>> = (0..model.dim)
        .map(|i| {
            vec![
                i.to_string(),
                fmt_f64(model.eigenvalues[i]),
                fmt_f64(model.mean_spectral[i]),
                fmt_f64(t.d2[i]),
                fmt_f64(b.bias[i]),
                fmt_f64(b.gain_error[i]),
            ]
        })
        .collect();
    out.add(&a.out, csv_table(&["index", "eigenvalue", "mean_spectral", "d2", "bias", "gain_error"], &rows));
    let max_gap = b.gain_error.iter().copied().fold(0.0, f64::max);
    let max_bias = b.bias.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(json!({ "max_gain_error": max_gap, "max_abs_bias": max_bias }).to_string())
}

fn read_signal(a: &EstimateArgs, path: &Path, out: &mut Outputs) -> CliResult<Vec<f64>> {
    out.input(path);
    let format = match &a.format {
        Some(f) => f.clone(),
        None => path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase(),
    };
    let parsed = match format.as_str() {
        "wav" => parse_wav(&read_bytes(path)?),
        "csv" | "txt" => parse_csv_signal(&read_text(path)?),
        "raw" | "f64" | "bin" => {
            let side = a.sidecar.clone().unwrap_or_else(|| with_suffix(path, ".json"));
            out.input(&side);
            parse_raw(&read_bytes(path)?, &read_text(&side)?).map(|(_, d)| d)
        }
        other => return Err(usage(format!("cannot infer input format from '{other}'; pass --format wav|csv|raw"))),
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn estimate(a: &EstimateArgs, out: &mut Outputs) -> CliResult<String> {
    let structure: Structure = a.structure.parse()?;
    let (est, summary) = match (&a.input, &a.synthetic) {
        (None, Some(spec)) => {
            let (d, l, mu) = parse_synthetic(spec)?;
            let (dense, _) = estimate::synthetic_circulant_model(d, l, mu)?;
            let est = estimate::CovarianceEstimate {
                mean: dense.mean.clone(),
                covariance: dense.covariance.clone(),
                windows_used: 0,
                windows_rejected: 0,
            };
            (est, json!({ "source": "synthetic", "dim": d }))
        }
        (Some(path), None) => {
            let window = a.window.ok_or_else(|| usage("--window is required with --input"))?;
            let signal = read_signal(a, path, out)?;
            let cfg = EstimationConfig {
                window,
                stride: a.stride.unwrap_or(window),
                silence_threshold: a.threshold,
                structure,
            };
            let est = estimate::sliding_window_covariance(&signal, &cfg)?;
            let s = json!({ "windows_used": est.windows_used, "windows_rejected": est.windows_rejected });
            (est, s)
        }
        _ => return Err(usage("give exactly one of --input or --synthetic")),
    };
    let fit = estimate::spectral_model_from_covariance(&est, structure)?;
    let mut model = fit.model;
    if let Some(k) = a.pca {
        model = estimate::pca_truncate(&model, k)?;
    }
    if a.synthetic.is_some() {
        model.source = format!("synthetic({})", a.synthetic.as_deref().unwrap_or_default());
    }
    out.add(&a.out, model.to_json());
    if let Some(p) = &a.covariance_out {
        let rows: Vec<Vec<f64>> = est.covariance.row_iter().map(|r| r.iter().copied().collect()).collect();
        out.add(p, write_csv_rows(None, rows.iter()));
    }
    if let Some(p) = &a.target_out {
        let t = TargetFile {
            mean: est.mean.iter().copied().collect(),
            covariance: est.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        out.add(p, serde_json::to_string_pretty(&t).expect("target serializes"));
    }
    let mut summary = summary;
    summary["dim"] = json!(model.dim);
    summary["floored_eigenvalues"] = json!(fit.floored);
    Ok(summary.to_string())
}

pub fn convert(a: &ConvertArgs, out: &mut Outputs) -> CliResult<String> {
    out.input(&a.input);
    let text = read_text(&a.input)?;
    let bad = |e: specsched::Error| usage(format!("{}: {e}", a.input.display()));
    match a.to.as_str() {
        "ve" => {
            let s = Schedule::from_json(&text).map_err(bad)?;
            let ve = spectral::vp_to_ve(&s)?;
            out.add(&a.out, ve.to_json());
            Ok(json!({ "to": "ve", "steps": ve.steps }).to_string())
        }
        "vp" => {
            let ve = VeSchedule::from_json(&text).map_err(bad)?;
            let s = spectral::ve_to_vp(&ve)?;
            out.add(&a.out, s.to_json());
            Ok(json!({ "to": "vp", "steps": s.steps }).to_string())
        }
        other => Err(usage(format!("unknown target '{other}' (expected ve or vp)"))),
    }
}
