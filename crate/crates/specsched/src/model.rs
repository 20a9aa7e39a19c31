//! Value types shared across the crate, with their JSON forms.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Default distance of the cleanest schedule point from 1.
pub const DEFAULT_EPS0: f64 = 1e-4;
/// Default value of the noisiest schedule point.
pub const DEFAULT_EPS_S: f64 = 4e-5;
/// Eigenvalues below this are treated as zero where a logarithm is needed.
pub const LAMBDA_FLOOR: f64 = 1e-12;

const ENDPOINT_TOL: f64 = 1e-12;

/// Gaussian target expressed in the eigenbasis of its covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralModel {
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    pub mean_spectral: Vec<f64>,
    pub source: String,
}

impl SpectralModel {
    pub fn new(eigenvalues: Vec<f64>, mean_spectral: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        let m = SpectralModel {
            dim: eigenvalues.len(),
            eigenvalues,
            mean_spectral,
            source: source.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        check_dim(self.dim, self.eigenvalues.len())?;
        check_dim(self.dim, self.mean_spectral.len())?;
        if let Some(l) = self.eigenvalues.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(invalid(format!("eigenvalue {l} is not a finite nonnegative number")));
        }
        if self.mean_spectral.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mean_spectral contains a non-finite entry"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SpectralModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Noise schedule: `alpha_bar[0]` is the cleanest level, `alpha_bar[steps]`
/// the noisiest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: String,
    pub steps: usize,
    pub eps0: f64,
    #[serde(rename = "epsS")]
    pub eps_s: f64,
    pub alpha_bar: Vec<f64>,
}

impl Schedule {
    /// Builds a schedule and checks every invariant, including monotonicity.
    pub fn new(kind: impl Into<String>, alpha_bar: Vec<f64>, eps0: f64, eps_s: f64) -> Result<Self> {
        let s = Self::new_unchecked(kind, alpha_bar, eps0, eps_s);
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn new_unchecked(kind: impl Into<String>, alpha_bar: Vec<f64>, eps0: f64, eps_s: f64) -> Self {
        Schedule {
            kind: kind.into(),
            steps: alpha_bar.len().saturating_sub(1),
            eps0,
            eps_s,
            alpha_bar,
        }
    }

    /// Endpoint, length and range checks without the ordering constraint.
    pub fn validate_box(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidSchedule("steps must be at least 1".into()));
        }
        if self.alpha_bar.len() != self.steps + 1 {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar has {} entries, expected steps + 1 = {}",
                self.alpha_bar.len(),
                self.steps + 1
            )));
        }
        check_endpoints(self.eps0, self.eps_s).map_err(|e| Error::InvalidSchedule(e.to_string()))?;
        let first = self.alpha_bar[0];
        let last = self.alpha_bar[self.steps];
        if (first - (1.0 - self.eps0)).abs() > ENDPOINT_TOL {
            return Err(Error::InvalidSchedule(format!("alpha_bar[0] = {first}, expected 1 - eps0")));
        }
        if (last - self.eps_s).abs() > ENDPOINT_TOL {
            return Err(Error::InvalidSchedule(format!("alpha_bar[S] = {last}, expected epsS")));
        }
        for (s, &a) in self.alpha_bar.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidSchedule(format!("alpha_bar[{s}] = {a} is outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_box()?;
        for s in 1..=self.steps {
            if self.alpha_bar[s] > self.alpha_bar[s - 1] {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar increases at step {s}: {} > {}",
                    self.alpha_bar[s],
                    self.alpha_bar[s - 1]
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schedule = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

pub(crate) fn check_endpoints(eps0: f64, eps_s: f64) -> Result<()> {
    if !(eps0 > 0.0 && eps0 < 1.0 && eps_s > 0.0 && eps_s < 1.0 && eps_s < 1.0 - eps0) {
        return Err(invalid(format!(
            "endpoints need 0 < epsS < 1 - eps0 < 1, got eps0 = {eps0}, epsS = {eps_s}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Ddim,
    Ddpm,
}

impl std::str::FromStr for Process {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(Process::Ddim),
            "ddpm" => Ok(Process::Ddpm),
            _ => Err(invalid(format!("unknown process '{s}' (expected ddim or ddpm)"))),
        }
    }
}

impl std::fmt::Display for Process {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Process::Ddim => "ddim",
            Process::Ddpm => "ddpm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Vp,
    Ve,
}

/// Diagonal output map of a reverse process: `v0 = d1 * vS + d2 * mu`,
/// plus the variance injected by stochastic steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub var_extra: Vec<f64>,
    pub process: Process,
    pub formulation: Formulation,
}

impl Transfer {
    pub fn dim(&self) -> usize {
        self.d1.len()
    }

    /// Total output variance per coordinate.
    pub fn variance(&self) -> Vec<f64> {
        self.d1.iter().zip(&self.var_extra).map(|(d, v)| d * d + v).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Variance-exploding schedule; `sigma[0]` is the cleanest level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VeSchedule {
    pub steps: usize,
    pub sigma: Vec<f64>,
}

impl VeSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.sigma.len() != self.steps + 1 {
            return Err(Error::InvalidSchedule(format!(
                "sigma has {} entries for {} steps",
                self.sigma.len(),
                self.steps
            )));
        }
        for (s, &v) in self.sigma.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSchedule(format!("sigma[{s}] = {v} is not finite and nonnegative")));
            }
            if s > 0 && v < self.sigma[s - 1] {
                return Err(Error::InvalidSchedule(format!("sigma decreases at step {s}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: VeSchedule = serde_json::from_str(text)?;
        v.validate()?;
        Ok(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ve schedule serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_json_round_trips_bit_exactly() {
        let m = SpectralModel::new(
            vec![0.1, 1.0 / 3.0, 2.640947058823529, 5e-324, 0.0],
            vec![std::f64::consts::PI, -1e-300, 0.0, 1.0, 0.3535533905932738],
            "unit",
        )
        .unwrap();
        let back = SpectralModel::from_json(&m.to_json()).unwrap();
        for (a, b) in m.eigenvalues.iter().zip(&back.eigenvalues) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in m.mean_spectral.iter().zip(&back.mean_spectral) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_json_rejects_unknown_fields_and_bad_values() {
        let extra = r#"{"dim":1,"eigenvalues":[1],"mean_spectral":[0],"source":"x","extra":1}"#;
        assert!(SpectralModel::from_json(extra).is_err());
        let neg = r#"{"dim":1,"eigenvalues":[-1],"mean_spectral":[0],"source":"x"}"#;
        assert!(SpectralModel::from_json(neg).is_err());
        let dim = r#"{"dim":2,"eigenvalues":[1],"mean_spectral":[0],"source":"x"}"#;
        assert!(SpectralModel::from_json(dim).is_err());
    }

    #[test]
    fn schedule_checks_endpoints_and_order() {
        let ok = Schedule::new("custom", vec![0.9999, 0.5, 4e-5], 1e-4, 4e-5);
        assert!(ok.is_ok());
        assert!(Schedule::new("custom", vec![0.9999, 0.3, 0.5, 4e-5], 1e-4, 4e-5).is_err());
        assert!(Schedule::new("custom", vec![0.999, 0.5, 4e-5], 1e-4, 4e-5).is_err());
        assert!(Schedule::new("custom", vec![0.9999], 1e-4, 4e-5).is_err());
        let json = ok.unwrap().to_json();
        assert!(json.contains("\"epsS\""));
        assert_eq!(Schedule::from_json(&json).unwrap().alpha_bar[1], 0.5);
    }
}
