//! Geometric parameter sequences and the iteration driver.
//!
//! With a fixed base `q`, `ε_ν = ε₀ q^ν`, `h_ν = h₀ q^ν`, `Λ_ν = Λ₀ q^{−ν}`,
//! `τ_ν = Λ⁻¹(Λ_ν)` and `1 − a = e^{−τ_ν σ_ν}`. The strip shrinks by `2σ_ν`
//! per step, and the total loss `r = Σ σ_ν` is controlled by the tail
//! integral of `log Λ(t)/t²`.

use serde::Serialize;
use thiserror::Error;

use crate::approx::{certify_diophantine, max_certification_order, ApproxError, ApproxFn, FrequencyDomain, TailIntegral};
use crate::fourier::TrigVectorField;
use crate::kamstep::{contraction_base, kam_step, Rescaling, StepError, StepOptions, StepParams, StepRecord};
use crate::verify::Conjugacy;

#[derive(Debug, Error, Clone)]
pub enum ScheduleError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("invalid constants a = {a}, b = {b}: {reason}")]
    InvalidConstants { a: f64, b: f64, reason: String },
    #[error("hypothesis {name} fails with margin {margin:e}")]
    Hypothesis { name: &'static str, margin: f64 },
    #[error("schedule invariant {name} fails at step {nu}")]
    Invariant { name: &'static str, nu: usize },
    #[error("Lambda0 too small: width loss r = {r} leaves s0 - 2r = {} <= 0; raise tau0", .s0 - 2.0 * .r)]
    WidthExhausted { r: f64, s0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepConstants {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    /// `log(1−a) / log q`.
    pub ratio: f64,
}

pub fn make_step_constants(a: f64, b: f64) -> Result<StepConstants, ScheduleError> {
    if !(a > 0.0 && a < 1.0) || !(b > 0.0 && b <= 0.5) {
        return Err(ScheduleError::InvalidConstants { a, b, reason: "need 0 < a < 1 and 0 < b <= 1/2".into() });
    }
    let q = contraction_base(a, b);
    if !(q < 1.0) {
        return Err(ScheduleError::InvalidConstants { a, b, reason: format!("q = {q} is not below 1") });
    }
    Ok(StepConstants { a, b, q, ratio: (-a).ln_1p() / q.ln() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallnessCheck {
    pub eps: f64,
    pub h: f64,
    pub alpha: f64,
    pub tau: f64,
    pub s: f64,
    pub lambda_tau: f64,
    pub integral: TailIntegral,
    /// `8 ∫_τ^∞ log Λ(t)/t² dt`.
    pub r: f64,
    /// `h/16 − ε`, must be positive.
    pub eps_vs_h: f64,
    /// `α/(32 Λ(τ)) − h/16`, must be non-negative.
    pub h_vs_alpha: f64,
    /// `s/2 − r`, must be positive.
    pub r_vs_s: f64,
    pub passed: bool,
}

impl SmallnessCheck {
    /// Name of the first failing condition.
    pub fn failing_margin(&self) -> Option<&'static str> {
        if !(self.eps_vs_h > 0.0) {
            Some("eps < h/16")
        } else if !(self.h_vs_alpha >= 0.0) {
            Some("h/16 <= alpha/(32 Lambda(tau))")
        } else if !(self.r_vs_s > 0.0) {
            Some("r < s/2")
        } else {
            None
        }
    }
}

/// `ε < h/16 ≤ α/(32Λ(τ))` and `r = 8∫_τ^∞ log Λ(t)/t² dt < s/2`.
pub fn check_main_smallness(eps: f64, h: f64, alpha: f64, delta: &ApproxFn, tau: f64, s: f64) -> Result<SmallnessCheck, ApproxError> {
    let lambda_tau = delta.eval_lambda(tau)?;
    let integral = delta.russmann_integral(tau)?;
    let r = 8.0 * integral.value;
    let mut check = SmallnessCheck {
        eps,
        h,
        alpha,
        tau,
        s,
        lambda_tau,
        integral,
        r,
        eps_vs_h: h / 16.0 - eps,
        h_vs_alpha: alpha / (32.0 * lambda_tau) - h / 16.0,
        r_vs_s: s / 2.0 - r,
        passed: false,
    };
    check.passed = eps < h / 16.0 && h / 16.0 <= alpha / (32.0 * lambda_tau) && r < s / 2.0;
    Ok(check)
}

/// Smallest `τ` (to relative `1e-12`) with `8∫_τ^∞ log Λ/t² < s/2`, scaled by
/// `1 + margin` for headroom.
pub fn tau_for_width(delta: &ApproxFn, s: f64, margin: f64) -> Result<f64, ApproxError> {
    let r_at = |t: f64| delta.russmann_integral(t).map(|i| 8.0 * i.value);
    let mut hi = 2.0;
    while r_at(hi)? >= s / 2.0 {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(ApproxError::Divergent { at: hi });
        }
    }
    let mut lo = if r_at(1.0)? < s / 2.0 { return Ok(1.0) } else { 1.0 };
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if r_at(mid)? < s / 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * (1.0 + margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleConfig {
    pub eps0: f64,
    pub h0: f64,
    pub lambda0: f64,
    pub s0: f64,
    pub a: f64,
    pub b: f64,
    /// The run stops once the budget `ε_ν` falls below this.
    pub stop_tol: f64,
    pub nu_max: usize,
}

pub const DEFAULT_STOP_TOL: f64 = 1e-12;
pub const DEFAULT_NU_MAX: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub config: ScheduleConfig,
    pub q: f64,
    pub ratio: f64,
    pub eps_nu: Vec<f64>,
    pub h_nu: Vec<f64>,
    pub lambda_nu: Vec<f64>,
    pub tau_nu: Vec<f64>,
    pub sigma_nu: Vec<f64>,
    /// One entry longer than the other sequences.
    pub s_nu: Vec<f64>,
    /// `Σ_{ν≥0} σ_ν` over the infinite sequence.
    pub r: f64,
    pub r_bound: f64,
    /// Number of steps before the budget reaches `stop_tol` (capped by `nu_max`).
    pub horizon: usize,
    /// Whether `Λ(τ₀) ≥ q⁻¹`, under which `r ≤ r_bound` is asserted.
    pub bound_applies: bool,
}

fn schedule_terms(cfg: &ScheduleConfig, q: f64, delta: &ApproxFn, nu: usize) -> Result<(f64, f64, f64, f64, f64), ApproxError> {
    let qn = q.powi(nu as i32);
    let lambda = cfg.lambda0 / qn;
    // τ_ν = sup{τ : Λ(τ) <= Λ_ν}, kept a few ulps inside so that rounding
    // never puts Λ(τ_ν) above Λ_ν
    let mut tau = delta.lambda_inverse(lambda)?;
    while tau > 1.0 && delta.eval_lambda(tau)? > lambda * (1.0 - 4.0 * f64::EPSILON) {
        tau = (tau * (1.0 - f64::EPSILON)).max(1.0);
    }
    let sigma = -(-cfg.a).ln_1p() / tau;
    Ok((cfg.eps0 * qn, cfg.h0 * qn, lambda, tau, sigma))
}

/// Materializes the sequences without checking the lemma's hypotheses.
pub fn materialize(cfg: &ScheduleConfig, delta: &ApproxFn) -> Result<Schedule, ScheduleError> {
    let consts = make_step_constants(cfg.a, cfg.b)?;
    let q = consts.q;
    let mut sched = Schedule {
        config: *cfg,
        q,
        ratio: consts.ratio,
        eps_nu: Vec::new(),
        h_nu: Vec::new(),
        lambda_nu: Vec::new(),
        tau_nu: Vec::new(),
        sigma_nu: Vec::new(),
        s_nu: vec![cfg.s0],
        r: 0.0,
        r_bound: 0.0,
        horizon: 0,
        bound_applies: false,
    };
    let mut nu = 0;
    loop {
        let (eps, h, lambda, tau, sigma) = schedule_terms(cfg, q, delta, nu)?;
        sched.eps_nu.push(eps);
        sched.h_nu.push(h);
        sched.lambda_nu.push(lambda);
        sched.tau_nu.push(tau);
        sched.sigma_nu.push(sigma);
        let s_next = sched.s_nu[nu] - 2.0 * sigma;
        sched.s_nu.push(s_next);
        if eps < cfg.stop_tol || nu >= cfg.nu_max {
            sched.horizon = nu;
            break;
        }
        nu += 1;
    }
    // the full series, continued until its terms no longer register
    let mut r: f64 = sched.sigma_nu.iter().sum();
    let mut nu = sched.sigma_nu.len();
    loop {
        let (.., sigma) = schedule_terms(cfg, q, delta, nu)?;
        r += sigma;
        if sigma <= 1e-17 * r || nu > 10_000_000 {
            break;
        }
        nu += 1;
    }
    sched.r = r;
    sched.r_bound = consts.ratio * delta.russmann_integral(sched.tau_nu[0])?.value;
    sched.bound_applies = delta.eval_lambda(sched.tau_nu[0])? >= 1.0 / q;
    Ok(sched)
}

/// The sequences of the iterative scheme, with the lemma's hypotheses and
/// the schedule invariants checked for every step.
pub fn build_schedule(cfg: &ScheduleConfig, delta: &ApproxFn) -> Result<Schedule, ScheduleError> {
    let consts = make_step_constants(cfg.a, cfg.b)?;
    let q = consts.q;
    let hyps = [
        ("eps0 < (1-q) h0 / (2a)", (1.0 - q) * cfg.h0 / (2.0 * cfg.a) - cfg.eps0, true),
        ("eps0 < b / Lambda0", cfg.b / cfg.lambda0 - cfg.eps0, true),
        ("h0 <= 1 / Lambda0", 1.0 / cfg.lambda0 - cfg.h0, false),
        ("Lambda0 >= Lambda(1)", cfg.lambda0 - 1.0, false),
        ("eps0 >= 0", cfg.eps0, false),
    ];
    for (name, margin, strict) in hyps {
        if margin < 0.0 || (strict && margin == 0.0) || margin.is_nan() {
            return Err(ScheduleError::Hypothesis { name, margin });
        }
    }
    let sched = materialize(cfg, delta)?;
    let rel = 8.0 * f64::EPSILON;
    for nu in 0..sched.eps_nu.len() {
        if sched.eps_nu[nu] * sched.lambda_nu[nu] > cfg.b * (1.0 + rel) {
            return Err(ScheduleError::Invariant { name: "eps_nu Lambda_nu <= b", nu });
        }
        let next_h = cfg.h0 * q.powi(nu as i32 + 1);
        if sched.h_nu[nu] - 2.0 * cfg.a * sched.eps_nu[nu] < next_h * (1.0 - rel) {
            return Err(ScheduleError::Invariant { name: "h_nu - 2a eps_nu >= h_{nu+1}", nu });
        }
        if delta.eval_lambda(sched.tau_nu[nu])? > sched.lambda_nu[nu] {
            return Err(ScheduleError::Invariant { name: "Lambda(tau_nu) <= Lambda_nu", nu });
        }
        if !(sched.s_nu[nu + 1] < sched.s_nu[nu]) {
            return Err(ScheduleError::Invariant { name: "s_nu decreasing", nu });
        }
    }
    if sched.bound_applies && sched.r > sched.r_bound * (1.0 + 1e-12) {
        return Err(ScheduleError::Invariant { name: "r <= r_bound", nu: 0 });
    }
    if !(cfg.s0 - 2.0 * sched.r > 0.0) {
        return Err(ScheduleError::WidthExhausted { r: sched.r, s0: cfg.s0 });
    }
    Ok(sched)
}

/// One CSV row per executed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRow {
    pub nu: usize,
    pub s_nu: f64,
    pub sigma_nu: f64,
    pub tau_nu: f64,
    #[serde(rename = "Lambda_nu")]
    pub lambda_nu: f64,
    pub eps_budget: f64,
    pub eps_measured: f64,
    pub p0_norm: f64,
    #[serde(rename = "F_norm")]
    pub f_norm: f64,
    pub tail_charge: f64,
    pub q_eff: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub conjugacy: Conjugacy,
    #[serde(skip)]
    pub records: Vec<StepRecord>,
    pub rows: Vec<StepRow>,
    pub converged: bool,
    pub steps: usize,
    /// `‖P_M‖_{s_M}` after the last step, normalized units.
    pub eps_final_measured: f64,
    #[serde(skip)]
    pub p_final: TrigVectorField,
    /// `Σ_ν ‖F^{(ν)}‖_{s_ν + σ̃_ν}`.
    pub generator_norm_sum: f64,
    pub tail_charge_total: f64,
    /// `Σ_ν |p₀^{(ν)}|`, normalized units.
    pub shift_sum: f64,
    pub k_cert_extended_to: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunFailureKind {
    Step { nu: usize, message: String },
    Budget { nu: usize, measured: f64, budget: f64 },
    Certification { nu: usize, message: String },
}

#[derive(Debug, Clone, Error)]
#[error("iteration aborted: {kind:?}")]
pub struct RunFailure {
    pub kind: RunFailureKind,
    #[source]
    pub step_error: Option<StepError>,
    pub partial: Box<RunOutcome>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Applies the step repeatedly along the schedule.
///
/// `p0` and `fd` are in normalized units (`α = 2`). Each step is solved at the
/// current normal form `ω* + Σ p₀`. A mode beyond the certified order triggers
/// a single extension of the certification.
pub fn run_iteration(
    p0: &TrigVectorField,
    fd: &mut FrequencyDomain,
    delta: &ApproxFn,
    sched: &Schedule,
    rescaling: Rescaling,
    opts: &StepOptions,
) -> Result<RunOutcome, RunFailure> {
    let n = fd.n();
    let mut out = RunOutcome {
        conjugacy: Conjugacy::identity(fd.omega_star.clone(), rescaling, sched.config.s0, sched.config.h0),
        records: Vec::new(),
        rows: Vec::new(),
        converged: false,
        steps: 0,
        eps_final_measured: p0.weighted_norm(sched.config.s0),
        p_final: p0.clone(),
        generator_norm_sum: 0.0,
        tail_charge_total: 0.0,
        shift_sum: 0.0,
        k_cert_extended_to: None,
    };
    let mut p = p0.clone();
    let mut omega = fd.omega_star.clone();
    let mut prev_measured: Option<f64> = None;
    let mut extended = false;
    let fail = |kind: RunFailureKind, err: Option<StepError>, out: RunOutcome| RunFailure { kind, step_error: err, partial: Box::new(out) };
    for nu in 0..=sched.horizon {
        let s = sched.s_nu[nu];
        let measured = p.weighted_norm(s);
        out.eps_final_measured = measured;
        out.p_final = p.clone();
        if measured > sched.eps_nu[nu] {
            return Err(fail(RunFailureKind::Budget { nu, measured, budget: sched.eps_nu[nu] }, None, out));
        }
        if p.is_zero() || sched.eps_nu[nu] < sched.config.stop_tol {
            out.converged = true;
            break;
        }
        if nu == sched.horizon {
            break;
        }
        let sp = StepParams::from_tau_a(sched.tau_nu[nu], sched.config.a, sched.eps_nu[nu], delta)
            .map_err(|e| fail(RunFailureKind::Step { nu, message: e.to_string() }, Some(e), out.clone()))?;
        let h = sched.h_nu[nu];
        let result = loop {
            match kam_step(&p, s, h, &omega, fd, delta, &sp, opts) {
                Err(StepError::Uncertified { k, k_cert }) if !extended => {
                    extended = true;
                    let cap = max_certification_order(n);
                    let target = k.norm().max(2 * k_cert).min(cap);
                    let accepted = target >= k.norm()
                        && certify_diophantine(fd, delta, target).map(|rep| fd.apply_certification(&rep)).unwrap_or(false);
                    out.k_cert_extended_to = Some(target);
                    if !accepted {
                        let msg = format!("mode {k} needs order {} but certification to {target} failed", k.norm());
                        return Err(fail(RunFailureKind::Certification { nu, message: msg }, None, out));
                    }
                }
                other => break other,
            }
        };
        let (p_next, rec) = match result {
            Ok(v) => v,
            Err(e) => {
                let kind = match &e {
                    StepError::Uncertified { .. } => RunFailureKind::Certification { nu, message: e.to_string() },
                    _ => RunFailureKind::Step { nu, message: e.to_string() },
                };
                return Err(fail(kind, Some(e), out));
            }
        };
        out.rows.push(StepRow {
            nu,
            s_nu: s,
            sigma_nu: sched.sigma_nu[nu],
            tau_nu: sched.tau_nu[nu],
            lambda_nu: sched.lambda_nu[nu],
            eps_budget: sched.eps_nu[nu],
            eps_measured: measured,
            p0_norm: max_abs(&rec.p0),
            f_norm: rec.generator_norm,
            tail_charge: rec.tail_charge,
            q_eff: prev_measured.map(|m| measured / m),
        });
        prev_measured = Some(measured);
        for (w, d) in omega.iter_mut().zip(&rec.p0) {
            *w += d;
        }
        for (t, d) in out.conjugacy.total_shift.iter_mut().zip(&rec.p0) {
            *t += d;
        }
        out.shift_sum += max_abs(&rec.p0);
        out.generator_norm_sum += rec.generator_norm;
        out.tail_charge_total += rec.tail_charge;
        out.conjugacy.generators.push(rec.generator.clone());
        out.conjugacy.s_final = sched.s_nu[nu + 1];
        out.conjugacy.h_final = rec.h_out_phi;
        out.records.push(rec);
        out.steps = nu + 1;
        p = p_next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> ApproxFn {
        ApproxFn::power(2.0).unwrap()
    }

    #[test]
    fn paper_constants() {
        let c = make_step_constants(0.5, 1.0 / 16.0).unwrap();
        // (1/2 + 1/64)(17/16) e^{1/2}, evaluated independently
        let oracle = (33.0 / 64.0) * (17.0 / 16.0) * 0.5f64.exp();
        assert!((c.q - oracle).abs() < 1e-15);
        assert!((c.q - 0.903_254_5).abs() < 1e-7);
        assert!((c.ratio - 2f64.ln() / (1.0 / c.q).ln()).abs() < 1e-12);
        assert!(c.ratio <= 7.0);
    }

    #[test]
    fn constants_rejected_when_q_reaches_one() {
        assert!(make_step_constants(0.0, 0.1).is_err());
        assert!(make_step_constants(0.5, 0.6).is_err());
        // along a = 2b the base exceeds one for small a
        for &b in &[1e-2, 1e-4, 1e-6] {
            assert!(contraction_base(2.0 * b, b) > 1.0);
            assert!(matches!(make_step_constants(2.0 * b, b), Err(ScheduleError::InvalidConstants { .. })));
        }
        // as a → 0 with b fixed, q → 1 from above 1 − a + a²b ... rejected as well
        assert!(make_step_constants(1e-9, 0.5).is_err());
    }

    #[test]
    fn smallness_examples() {
        let d = cube();
        // the width chain in the desk setting
        let c = check_main_smallness(1e-6, 1e-3, 2.0, &d, 400.0, 2.0).unwrap();
        let closed = 8.0 * 3.0 * (1.0 + 400f64.ln()) / 400.0;
        assert!((c.r - closed).abs() < 1e-12 && (c.r - 0.41949).abs() < 1e-5);
        assert!(c.r_vs_s > 0.0);
        // h/16 <= α/(32Λ(400)) does not hold for h = 1e-3
        assert!(!c.passed && c.failing_margin() == Some("h/16 <= alpha/(32 Lambda(tau))"));

        let lam = d.eval_lambda(400.0).unwrap();
        let h = 1.0 / lam;
        let ok = check_main_smallness(0.5 * h / 16.0, h, 2.0, &d, 400.0, 2.0).unwrap();
        assert!(ok.passed);
        let edge = check_main_smallness(h / 16.0, h, 2.0, &d, 400.0, 2.0).unwrap();
        assert!(!edge.passed && edge.failing_margin() == Some("eps < h/16"));

        // τ at which r = s/2 for s = 1: the strict inequality fails there
        let tau = tau_for_width(&d, 1.0, 0.0).unwrap();
        let lo = tau * (1.0 - 1e-9);
        let c = check_main_smallness(1e-30, 1e-28, 2.0, &d, lo, 1.0).unwrap();
        assert!(c.failing_margin() == Some("r < s/2"));
        let c = check_main_smallness(1e-30, 1e-28, 2.0, &d, tau * 1.001, 1.0).unwrap();
        assert!(c.r_vs_s > 0.0);
    }

    fn desk_cfg(tau0: f64) -> ScheduleConfig {
        let d = cube();
        let lambda0 = d.eval_lambda(tau0).unwrap();
        ScheduleConfig {
            eps0: 0.5 / (16.0 * lambda0),
            h0: 1.0 / lambda0,
            lambda0,
            s0: 2.0,
            a: 0.5,
            b: 1.0 / 16.0,
            stop_tol: 1e-14,
            nu_max: 500,
        }
    }

    #[test]
    fn power_law_closed_forms() {
        let d = cube();
        let sched = build_schedule(&desk_cfg(400.0), &d).unwrap();
        let q = sched.q;
        for nu in 0..sched.tau_nu.len() {
            let tau = (sched.config.lambda0 * q.powi(-(nu as i32))).cbrt();
            assert!((sched.tau_nu[nu] - tau).abs() < 1e-12 * tau);
            assert!((sched.sigma_nu[nu] - 2f64.ln() / tau).abs() < 1e-12 * sched.sigma_nu[nu]);
        }
        let geometric = 2f64.ln() / 400.0 / (1.0 - q.cbrt());
        assert!((sched.r - geometric).abs() < 1e-10 * geometric, "{} vs {geometric}", sched.r);
        assert!(sched.bound_applies && sched.r <= sched.r_bound);
        assert!(sched.s_nu.last().unwrap() > &(2.0 - 2.0 * sched.r));
    }

    #[test]
    fn product_invariant_at_equality() {
        let d = cube();
        let mut cfg = desk_cfg(400.0);
        cfg.eps0 = cfg.b / cfg.lambda0;
        let sched = materialize(&cfg, &d).unwrap();
        for nu in 0..sched.eps_nu.len() {
            let prod = sched.eps_nu[nu] * sched.lambda_nu[nu];
            assert!((prod - cfg.b).abs() <= 1e-15 * cfg.b * (1.0 + nu as f64 / 16.0));
        }
        // the strict hypothesis rejects the equality case
        assert!(matches!(build_schedule(&cfg, &d), Err(ScheduleError::Hypothesis { name: "eps0 < b / Lambda0", .. })));
    }

    #[test]
    fn width_exhaustion_is_named() {
        let d = cube();
        let mut cfg = desk_cfg(20.0);
        cfg.s0 = 0.2;
        match build_schedule(&cfg, &d) {
            Err(ScheduleError::WidthExhausted { r, s0 }) => assert!(s0 - 2.0 * r <= 0.0),
            other => panic!("{other:?}"),
        }
    }

    fn normalized_golden(h: f64) -> FrequencyDomain {
        let mut fd = FrequencyDomain::new(vec![2.0, 1.0 + 5f64.sqrt()], h, 2.0).unwrap();
        fd.k_cert = 40;
        fd
    }

    #[test]
    fn zero_perturbation_converges_immediately() {
        let d = cube();
        let sched = build_schedule(&desk_cfg(150.0), &d).unwrap();
        let mut fd = normalized_golden(sched.config.h0);
        let out = run_iteration(&TrigVectorField::zero(2, true), &mut fd, &d, &sched, Rescaling::identity(), &StepOptions::default()).unwrap();
        assert!(out.converged && out.steps == 0 && out.rows.is_empty());
        assert!(out.conjugacy.generators.is_empty());
    }

    #[test]
    fn constant_perturbation_geometric_recursion() {
        let d = cube();
        let sched = build_schedule(&desk_cfg(150.0), &d).unwrap();
        let mut fd = normalized_golden(sched.config.h0);
        let eps0 = sched.config.eps0;
        let c = [0.6 * eps0, -0.8 * eps0];
        let p = TrigVectorField::constant_real(&c);
        let out = run_iteration(&p, &mut fd, &d, &sched, Rescaling::identity(), &StepOptions::default()).unwrap();
        assert!(out.converged);
        for (nu, rec) in out.records.iter().enumerate() {
            let factor = 0.5f64.powi(nu as i32);
            for j in 0..2 {
                let mean = rec.eps_in_measured;
                assert!((mean - 0.8 * eps0 * factor).abs() <= 1e-13 * eps0);
                assert!((rec.p0[j] - 0.5 * c[j] * factor).abs() <= 1e-13 * eps0);
            }
        }
        // the remainder is eventually pruned, leaving the full shift c
        assert!(out.p_final.is_zero());
        for j in 0..2 {
            assert!((out.conjugacy.total_shift[j] - c[j]).abs() <= 1e-13 * eps0);
        }
    }
}
