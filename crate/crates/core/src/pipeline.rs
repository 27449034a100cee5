//! End-to-end run: certify, normalize, check smallness, build the schedule,
//! iterate and verify.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{certify_diophantine, max_certification_order, ApproxError, ApproxFn, CertificationReport, FrequencyDomain};
use crate::config::{AlphaSpec, AutoOr, ConfigError, PerturbationSpec, RunConfig};
use crate::fourier::TrigVectorField;
use crate::kamstep::{kam_step, normalize_alpha, Rescaling, StepError, StepParams, StepRecord};
use crate::perturbation::{random_real_field, PerturbationError, RNG_NAME};
use crate::schedule::{
    build_schedule, check_main_smallness, run_iteration, tau_for_width, RunFailureKind, ScheduleConfig, ScheduleError, SmallnessCheck,
    StepRow,
};
use crate::verify::{verify_conjugacy, Conjugacy, Verification, VerifyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub exit_code: i32,
    pub outcome: &'static str,
    /// The failing condition, when there is one.
    pub margin: Option<String>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleSummary {
    pub q: f64,
    pub ratio: f64,
    pub eps0: f64,
    pub h0: f64,
    pub lambda0: f64,
    pub s0: f64,
    pub tau0: f64,
    pub r: f64,
    pub r_bound: f64,
    pub s_limit: f64,
    pub horizon: usize,
    pub stop_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub converged: bool,
    pub steps: usize,
    /// `‖P_M‖_{s_M}` in normalized units.
    pub eps_final_measured: f64,
    pub eps_final_original: f64,
    pub generator_norm_sum: f64,
    pub tail_charge_total: f64,
    pub total_shift_original: Vec<f64>,
    pub omega_final_original: Vec<f64>,
    pub k_cert_extended_to: Option<u32>,
    pub failure: Option<RunFailureKind>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoremBounds {
    /// `‖φ − id‖` against `ε`.
    pub shift_norm: f64,
    pub shift_bound: f64,
    pub shift_holds: bool,
    /// `Σ‖F^{(ν)}‖` against `Λ(τ₀) α⁻¹ ε`.
    pub generator_sum: f64,
    pub generator_bound: f64,
    pub generator_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub rng: &'static str,
    pub certification: Option<CertificationReport>,
    pub alpha: Option<f64>,
    pub rescaling: Option<Rescaling>,
    pub eps_original: Option<f64>,
    pub h_original: Option<f64>,
    pub smallness: Option<SmallnessCheck>,
    pub schedule: Option<ScheduleSummary>,
    pub run: Option<RunSummary>,
    pub verification: Option<Verification>,
    pub theorem_bounds: Option<TheoremBounds>,
    pub status: Status,
}

/// Everything `verify-only` needs to recompute the verification block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyArtifact {
    pub conjugacy: Conjugacy,
    /// The perturbation in original units.
    pub perturbation: TrigVectorField,
    pub grid: usize,
    #[serde(rename = "T_orbit")]
    pub t_orbit: f64,
    pub theta0: Vec<f64>,
    pub generator_norm_sum: f64,
}

impl ConjugacyArtifact {
    pub fn verify(&self) -> Result<Verification, VerifyError> {
        verify_conjugacy(&self.conjugacy, &self.perturbation, self.grid, self.t_orbit, &self.theta0, self.generator_norm_sum)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub rows: Vec<StepRow>,
    pub artifact: Option<ConjugacyArtifact>,
    pub records: Vec<StepRecord>,
}

impl PipelineOutput {
    pub fn exit_code(&self) -> i32 {
        self.report.status.exit_code
    }
}

/// Data of a run after certification and normalization.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub delta: ApproxFn,
    pub certification: CertificationReport,
    pub alpha: f64,
    pub rescaling: Rescaling,
    /// Normalized domain (`α = 2`).
    pub fd: FrequencyDomain,
    pub p_original: TrigVectorField,
    pub p: TrigVectorField,
    pub tau0: f64,
    pub h_original: f64,
    pub eps_original: f64,
}

pub enum Preparation {
    Ready(Box<Prepared>),
    /// The Diophantine certification did not support the requested `α`.
    Rejected { certification: CertificationReport, message: String },
}

pub fn prepare(cfg: &RunConfig) -> Result<Preparation, PipelineError> {
    cfg.validate()?;
    let delta = cfg.delta_fn()?;
    let omega = cfg.omega.resolve();
    let n = cfg.n;
    let (alpha_req, k) = match cfg.alpha {
        AlphaSpec::Value(a) => (Some(a), cfg.k_cert),
        AlphaSpec::Auto { auto } => (None, auto.k),
    };
    let k = k.min(max_certification_order(n));
    // h is a placeholder until α and τ₀ are known
    let probe = FrequencyDomain::new(omega.clone(), 1.0, alpha_req.unwrap_or(f64::MIN_POSITIVE))?;
    let cert = certify_diophantine(&probe, &delta, k)?;
    let alpha = alpha_req.unwrap_or(cert.alpha_max);
    if !(alpha > 0.0 && alpha <= cert.alpha_max) {
        let message = format!("alpha = {alpha} is not certified up to order {k} (admissible up to {})", cert.alpha_max);
        return Ok(Preparation::Rejected { certification: cert, message });
    }
    let factor = 2.0 / alpha;
    let tau0 = match cfg.tau0 {
        AutoOr::Value(t) => t,
        AutoOr::Auto(_) => tau_for_width(&delta, cfg.s, 0.0)?,
    };
    let lambda0 = delta.eval_lambda(tau0)?;
    let h_original = match cfg.h {
        AutoOr::Value(h) => h,
        AutoOr::Auto(_) => 1.0 / (factor * lambda0),
    };
    let mut fd = FrequencyDomain::new(omega, h_original, alpha)?;
    if !fd.apply_certification(&cert) {
        return Ok(Preparation::Rejected { certification: cert, message: "certification does not match the domain".into() });
    }
    let p_original = match &cfg.perturbation {
        PerturbationSpec::Inline(p) => p.clone(),
        PerturbationSpec::Random(spec) => random_real_field(n, spec, cfg.s)?,
    };
    let eps_original = p_original.weighted_norm(cfg.s);
    let (p, fd_norm, rescaling) = normalize_alpha(&p_original, &fd)?;
    Ok(Preparation::Ready(Box::new(Prepared {
        delta,
        certification: cert,
        alpha,
        rescaling,
        fd: fd_norm,
        p_original,
        p,
        tau0,
        h_original,
        eps_original,
    })))
}

fn status(exit_code: i32, outcome: &'static str, margin: Option<String>, message: Option<String>) -> Status {
    Status { exit_code, outcome, margin, message }
}

fn empty_report(cfg: &RunConfig) -> RunReport {
    RunReport {
        config: cfg.clone(),
        rng: RNG_NAME,
        certification: None,
        alpha: None,
        rescaling: None,
        eps_original: None,
        h_original: None,
        smallness: None,
        schedule: None,
        run: None,
        verification: None,
        theorem_bounds: None,
        status: status(EXIT_OK, "converged", None, None),
    }
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let mut report = empty_report(cfg);
    let out = |report: RunReport| PipelineOutput { report, rows: Vec::new(), artifact: None, records: Vec::new() };
    let prep = match prepare(cfg)? {
        Preparation::Ready(p) => p,
        Preparation::Rejected { certification, message } => {
            report.certification = Some(certification);
            report.status = status(EXIT_HYPOTHESIS, "hypothesis_failure", Some("diophantine certification".into()), Some(message));
            return Ok(out(report));
        }
    };
    report.certification = Some(prep.certification.clone());
    report.alpha = Some(prep.alpha);
    report.rescaling = Some(prep.rescaling);
    report.eps_original = Some(prep.eps_original);
    report.h_original = Some(prep.h_original);

    let eps0 = prep.p.weighted_norm(cfg.s);
    let h0 = prep.fd.h;
    let small = check_main_smallness(eps0, h0, 2.0, &prep.delta, prep.tau0, cfg.s)?;
    report.smallness = Some(small);
    if !small.passed {
        let margin = small.failing_margin().map(str::to_string);
        report.status = status(EXIT_HYPOTHESIS, "hypothesis_failure", margin, Some("main smallness condition fails".into()));
        return Ok(out(report));
    }

    let lambda0 = prep.delta.eval_lambda(prep.tau0)?;
    let scfg = ScheduleConfig {
        eps0,
        h0,
        lambda0,
        s0: cfg.s,
        a: cfg.constants.a,
        b: cfg.constants.b,
        stop_tol: cfg.stop_tol,
        nu_max: cfg.nu_max,
    };
    let sched = match build_schedule(&scfg, &prep.delta) {
        Ok(s) => s,
        Err(e) => {
            let margin = match &e {
                ScheduleError::Hypothesis { name, .. } | ScheduleError::Invariant { name, .. } => Some(name.to_string()),
                ScheduleError::WidthExhausted { .. } => Some("s0 - 2r > 0".into()),
                _ => None,
            };
            report.status = status(EXIT_HYPOTHESIS, "hypothesis_failure", margin, Some(e.to_string()));
            return Ok(out(report));
        }
    };
    report.schedule = Some(ScheduleSummary {
        q: sched.q,
        ratio: sched.ratio,
        eps0,
        h0,
        lambda0,
        s0: cfg.s,
        tau0: sched.tau_nu[0],
        r: sched.r,
        r_bound: sched.r_bound,
        s_limit: cfg.s - 2.0 * sched.r,
        horizon: sched.horizon,
        stop_tol: cfg.stop_tol,
    });

    let mut fd = prep.fd.clone();
    let opts = cfg.step_options();
    let outcome = match run_iteration(&prep.p, &mut fd, &prep.delta, &sched, prep.rescaling, &opts) {
        Ok(o) => o,
        Err(fail) => {
            let message = fail.to_string();
            let partial = *fail.partial;
            report.run = Some(summary(&partial, &prep.rescaling, Some(fail.kind.clone())));
            let margin = match &fail.step_error {
                Some(StepError::Certificate(_)) => Some("measured + tail <= q eps".to_string()),
                Some(StepError::Generator { .. }) => Some("generator bound".into()),
                Some(StepError::Divisor { .. }) => Some("divisor bound".into()),
                _ => None,
            };
            report.status = status(EXIT_CERTIFICATE, "certificate_failure", margin, Some(message));
            return Ok(PipelineOutput { report, rows: partial.rows, artifact: None, records: partial.records });
        }
    };
    report.run = Some(summary(&outcome, &prep.rescaling, None));

    let artifact = ConjugacyArtifact {
        conjugacy: outcome.conjugacy.clone(),
        perturbation: prep.p_original.clone(),
        grid: cfg.grid,
        t_orbit: cfg.t_orbit,
        theta0: cfg.theta0(),
        generator_norm_sum: outcome.generator_norm_sum,
    };
    let verification = artifact.verify()?;
    report.verification = Some(verification);
    let bounds = TheoremBounds {
        shift_norm: verification.phi_shift_norm,
        shift_bound: prep.eps_original,
        shift_holds: verification.phi_shift_norm <= prep.eps_original,
        generator_sum: outcome.generator_norm_sum,
        generator_bound: lambda0 * prep.eps_original / prep.alpha,
        generator_holds: outcome.generator_norm_sum <= lambda0 * prep.eps_original / prep.alpha,
    };
    report.theorem_bounds = Some(bounds);

    let tol = cfg.tolerances;
    let checks = [
        ("converged", outcome.converged),
        ("defect_max <= tolerance", verification.defect_max <= tol.defect),
        ("orbit_dev <= tolerance", verification.orbit_dev <= tol.orbit),
        ("orbit/defect Gronwall inequality", verification.gronwall.holds),
        ("|phi - id| <= eps", bounds.shift_holds),
        ("sum |F| <= Lambda(tau0) eps / alpha", bounds.generator_holds),
    ];
    if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
        report.status = status(EXIT_VERIFICATION, "verification_failure", Some(name.to_string()), None);
    }
    Ok(PipelineOutput { report, rows: outcome.rows, artifact: Some(artifact), records: outcome.records })
}

fn summary(o: &crate::schedule::RunOutcome, r: &Rescaling, failure: Option<RunFailureKind>) -> RunSummary {
    RunSummary {
        converged: o.converged,
        steps: o.steps,
        eps_final_measured: o.eps_final_measured,
        eps_final_original: r.to_original(o.eps_final_measured),
        generator_norm_sum: o.generator_norm_sum,
        tail_charge_total: o.tail_charge_total,
        total_shift_original: o.conjugacy.total_shift.iter().map(|&x| r.to_original(x)).collect(),
        omega_final_original: o.conjugacy.omega_final_original(),
        k_cert_extended_to: o.k_cert_extended_to,
        failure,
    }
}

/// A single step at `ν = 0` with the parameters the full run would use.
#[derive(Debug, Clone, Serialize)]
pub struct StepOnce {
    pub params: StepParams,
    pub record: Option<StepRecord>,
    pub error: Option<String>,
}

pub fn step_once(cfg: &RunConfig) -> Result<StepOnce, PipelineError> {
    let prep = match prepare(cfg)? {
        Preparation::Ready(p) => p,
        Preparation::Rejected { message, .. } => return Err(ConfigError::Invalid(message).into()),
    };
    let eps = prep.p.weighted_norm(cfg.s);
    let params = StepParams::from_tau_a(prep.tau0, cfg.constants.a, eps, &prep.delta)?;
    let res = kam_step(&prep.p, cfg.s, prep.fd.h, &prep.fd.omega_star, &prep.fd, &prep.delta, &params, &cfg.step_options());
    Ok(match res {
        Ok((_, rec)) => StepOnce { params, record: Some(rec), error: None },
        Err(e) => StepOnce { params, record: None, error: Some(e.to_string()) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::desk_config;
    use crate::perturbation::RandomSpec;

    #[test]
    fn zero_perturbation_run() {
        let mut cfg = desk_config();
        cfg.perturbation = PerturbationSpec::Inline(TrigVectorField::zero(2, true));
        cfg.grid = 8;
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.exit_code(), EXIT_OK, "{:?}", out.report.status);
        assert!(out.rows.is_empty());
        assert!(out.report.verification.unwrap().defect_max <= 1e-9);
    }

    #[test]
    fn large_perturbation_names_the_margin() {
        let mut cfg = desk_config();
        let lambda = 150f64.powi(3);
        // h = 1/(2Λ) in original units for α = 1; ε = h/8
        let h = 1.0 / (2.0 * lambda);
        cfg.h = AutoOr::Value(h);
        cfg.perturbation = PerturbationSpec::Random(RandomSpec { modes: 5, max_k: 3, eps: h / 8.0, seed: 1, with_mean: false });
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.exit_code(), EXIT_HYPOTHESIS);
        assert_eq!(out.report.status.margin.as_deref(), Some("eps < h/16"));
    }

    #[test]
    fn uncertifiable_alpha_is_a_hypothesis_failure() {
        let mut cfg = desk_config();
        cfg.alpha = AlphaSpec::Value(1.5);
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.exit_code(), EXIT_HYPOTHESIS);
        assert!(out.report.certification.is_some());
    }

    #[test]
    fn step_once_on_zero() {
        let mut cfg = desk_config();
        cfg.perturbation = PerturbationSpec::Inline(TrigVectorField::zero(2, true));
        let s = step_once(&cfg).unwrap();
        let rec = s.record.unwrap();
        assert_eq!(rec.eps_out_measured, 0.0);
        assert_eq!(rec.tail_charge, 0.0);
        assert!(rec.generator.is_zero() && rec.p0.iter().all(|&x| x == 0.0));
    }
}
