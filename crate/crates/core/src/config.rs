//! Run configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{ApproxError, ApproxFn, ApproxKind};
use crate::fourier::TrigVectorField;
use crate::kamstep::StepOptions;
use crate::perturbation::RandomSpec;
use crate::schedule::{DEFAULT_NU_MAX, DEFAULT_STOP_TOL};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON for this schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Auto {
    #[serde(rename = "auto")]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaPreset {
    /// `(1, (1+√5)/2)`.
    #[serde(rename = "golden2")]
    Golden2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaSpec {
    Preset(OmegaPreset),
    Explicit(Vec<f64>),
}

impl OmegaSpec {
    pub fn resolve(&self) -> Vec<f64> {
        match self {
            OmegaSpec::Preset(OmegaPreset::Golden2) => vec![1.0, (1.0 + 5f64.sqrt()) / 2.0],
            OmegaSpec::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoCertify {
    /// Certification order.
    pub k: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Auto { auto: AutoCertify },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Value(f64),
    Auto(Auto),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationSpec {
    Inline(TrigVectorField),
    Random(RandomSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    pub a: f64,
    pub b: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { a: 0.5, b: 1.0 / 16.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub defect: f64,
    pub orbit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { defect: 1e-8, orbit: 1e-6 }
    }
}

fn default_stop_tol() -> f64 {
    DEFAULT_STOP_TOL
}
fn default_nu_max() -> usize {
    DEFAULT_NU_MAX
}
fn default_grid() -> usize {
    64
}
fn default_t_orbit() -> f64 {
    10.0
}
fn default_k_cert() -> u32 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub omega: OmegaSpec,
    pub delta: ApproxKind,
    pub alpha: AlphaSpec,
    /// Certification order when `alpha` is given explicitly.
    #[serde(default = "default_k_cert")]
    pub k_cert: u32,
    pub s: f64,
    pub h: AutoOr,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub constants: Constants,
    pub tau0: AutoOr,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_nu_max")]
    pub nu_max: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_t_orbit", rename = "T_orbit")]
    pub t_orbit: f64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub step: Option<StepOptions>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn delta_fn(&self) -> Result<ApproxFn, ConfigError> {
        Ok(ApproxFn::try_from(self.delta.clone())?)
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| (0..self.n).map(|j| 0.5 * (j + 1) as f64).collect())
    }

    pub fn step_options(&self) -> StepOptions {
        self.step.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let omega = self.omega.resolve();
        if self.n == 0 || omega.len() != self.n {
            return bad(format!("omega has {} components but n = {}", omega.len(), self.n));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return bad("omega must be finite".into());
        }
        self.delta_fn()?;
        match self.alpha {
            AlphaSpec::Value(a) if !(a > 0.0 && a.is_finite()) => return bad(format!("alpha = {a} must be positive")),
            AlphaSpec::Auto { auto } if auto.k == 0 => return bad("auto-certification needs k >= 1".into()),
            _ => {}
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return bad(format!("s = {} must be positive", self.s));
        }
        if let AutoOr::Value(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("h = {h} must be positive"));
            }
        }
        if let AutoOr::Value(t) = self.tau0 {
            if !(t >= 1.0 && t.is_finite()) {
                return bad(format!("tau0 = {t} must be at least 1"));
            }
        }
        match &self.perturbation {
            PerturbationSpec::Inline(p) => {
                if p.n() != self.n {
                    return bad(format!("inline perturbation has n = {}, expected {}", p.n(), self.n));
                }
                if !p.is_real() {
                    return bad("inline perturbation must be real".into());
                }
            }
            PerturbationSpec::Random(r) => {
                if !(r.eps >= 0.0 && r.eps.is_finite()) || r.max_k == 0 {
                    return bad("random perturbation needs eps >= 0 and max_k >= 1".into());
                }
            }
        }
        if !(self.stop_tol > 0.0) || self.grid == 0 || !(self.t_orbit > 0.0) {
            return bad("stop_tol, grid and T_orbit must be positive".into());
        }
        if self.theta0.as_ref().is_some_and(|t| t.len() != self.n) {
            return bad("theta0 must have n components".into());
        }
        Ok(())
    }

    /// Overrides the seed of a random perturbation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let PerturbationSpec::Random(r) = &mut self.perturbation {
            r.seed = seed;
        }
        self
    }
}

/// The reference configuration used in the documentation and acceptance runs:
/// golden frequency, `Δ(t) = t²`, and a perturbation small enough for the
/// main smallness condition at `τ = 150`.
pub fn desk_config() -> RunConfig {
    RunConfig {
        n: 2,
        omega: OmegaSpec::Preset(OmegaPreset::Golden2),
        delta: ApproxKind::Power { rho: 2.0 },
        alpha: AlphaSpec::Auto { auto: AutoCertify { k: 200 } },
        k_cert: 200,
        s: 2.0,
        h: AutoOr::Auto(Auto::Auto),
        perturbation: PerturbationSpec::Random(RandomSpec { modes: 20, max_k: 5, eps: 9e-9, seed: 20240601, with_mean: true }),
        constants: Constants::default(),
        tau0: AutoOr::Value(150.0),
        stop_tol: DEFAULT_STOP_TOL,
        nu_max: DEFAULT_NU_MAX,
        grid: 64,
        t_orbit: 10.0,
        theta0: None,
        step: None,
        tolerances: Tolerances::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_round_trips() {
        let cfg = desk_config();
        let text = cfg.to_json_pretty();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json_pretty(), text);
        assert!(text.contains("\"golden2\"") && text.contains("\"auto\""));
    }

    #[test]
    fn explicit_forms_parse() {
        let text = r#"{
            "n": 2, "omega": [1.0, 1.5], "delta": {"kind": "power", "rho": 1.0},
            "alpha": 0.5, "s": 1.0, "h": 1e-4, "tau0": 200.0,
            "perturbation": {"inline": {"n": 2, "real": true, "modes": []}}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.alpha, AlphaSpec::Value(0.5));
        assert_eq!(cfg.h, AutoOr::Value(1e-4));
        assert_eq!(cfg.grid, 64);
        assert_eq!(cfg.theta0(), vec![0.5, 1.0]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = desk_config();
        cfg.n = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = desk_config();
        cfg.s = -1.0;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_json(r#"{"n": 2}"#).is_err());
        let text = desk_config().to_json_pretty().replace("\"grid\"", "\"gird\"");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn seed_override() {
        let cfg = desk_config().with_seed(5);
        match cfg.perturbation {
            PerturbationSpec::Random(r) => assert_eq!(r.seed, 5),
            _ => unreachable!(),
        }
    }
}
