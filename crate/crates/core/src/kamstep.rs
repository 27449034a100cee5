//! One step of the KAM scheme: infrared/ultraviolet split, homological solve,
//! assembly of the new perturbation and the frequency shift.
//!
//! With `X = N + P`, `N = ω` constant and `F` solving `[F, N] = P̃ − P°`, the
//! time-1 map of `F` transforms `X` into `N₊ + P₊` where `N₊ = ω + P°` and
//! `P₊ = F₁^* P̂ + ∫₀¹ F_t^* [P_t, F] dt`, `P_t = t P̃ + (1−t) P°`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::approx::{dot, ApproxError, ApproxFn, FrequencyDomain};
use crate::calculus::{integrated_pullback_bracket, lie_bracket, lie_pullback, CalculusError, PullbackBudget};
use crate::fourier::{check_larger_domain_bound, FieldError, LargerDomainCheck, MultiIndex, TrigVectorField};

#[derive(Debug, Error, Clone)]
pub enum StepError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error("invalid step parameters: {0}")]
    Params(String),
    #[error("step hypothesis fails: {0:?}")]
    Hypothesis(HypothesisCheck),
    #[error("perturbation norm {measured:e} exceeds the step budget {eps:e}")]
    InputNorm { measured: f64, eps: f64 },
    #[error("the mean must be removed before the homological solve")]
    MeanNotRemoved,
    #[error("mode {k} lies beyond the certified order {k_cert}")]
    Uncertified { k: MultiIndex, k_cert: u32 },
    #[error("divisor |<k, w>| = {divisor:e} at k = {k} is below 1/Delta(tau) = {bound:e}")]
    Divisor { k: MultiIndex, divisor: f64, bound: f64 },
    #[error("homological residual {residual:e} exceeds {limit:e}")]
    Residual { residual: f64, limit: f64 },
    #[error("infrared part on the widened strip: {0:?}")]
    LargerDomain(LargerDomainCheck),
    #[error("generator norm {norm:e} exceeds Lambda(tau) sigma eps = {bound:e}")]
    Generator { norm: f64, bound: f64 },
    #[error("contraction certificate fails: measured {} + tail {} > q eps = {}", .0.eps_out_measured, .0.tail_charge, .0.eps_out_budget)]
    Certificate(Box<StepRecord>),
}

/// `q = (1 − a + a²b)(1 + b) e^a`.
pub fn contraction_base(a: f64, b: f64) -> f64 {
    (1.0 - a + a * a * b) * (1.0 + b) * a.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepParams {
    pub sigma: f64,
    pub tau: f64,
    pub a: f64,
    /// `Λ(τ) ε`.
    pub b: f64,
    pub sigma_tilde: f64,
    pub q: f64,
    pub eps: f64,
    pub lambda_tau: f64,
    pub delta_tau: f64,
}

impl StepParams {
    pub fn from_tau_sigma(tau: f64, sigma: f64, eps: f64, delta: &ApproxFn) -> Result<Self, StepError> {
        if !(tau >= 1.0 && sigma > 0.0 && eps >= 0.0 && tau.is_finite() && sigma.is_finite()) {
            return Err(StepError::Params(format!("tau = {tau}, sigma = {sigma}, eps = {eps}")));
        }
        let a = -(-tau * sigma).exp_m1();
        if !(a > 0.0 && a < 1.0) {
            return Err(StepError::Params(format!("a = 1 - exp(-tau sigma) = {a} is not in (0, 1)")));
        }
        let lambda_tau = delta.eval_lambda(tau)?;
        let b = lambda_tau * eps;
        Ok(StepParams {
            sigma,
            tau,
            a,
            b,
            sigma_tilde: sigma * (1.0 - a) / a,
            q: contraction_base(a, b),
            eps,
            lambda_tau,
            delta_tau: delta.delta(tau)?,
        })
    }

    /// `σ` from `1 − a = e^{−τσ}`.
    pub fn from_tau_a(tau: f64, a: f64, eps: f64, delta: &ApproxFn) -> Result<Self, StepError> {
        if !(a > 0.0 && a < 1.0) {
            return Err(StepError::Params(format!("a = {a} is not in (0, 1)")));
        }
        let sigma = -(-a).ln_1p() / tau;
        let mut sp = Self::from_tau_sigma(tau, sigma, eps, delta)?;
        sp.a = a;
        sp.sigma_tilde = sigma * (1.0 - a) / a;
        sp.q = contraction_base(a, sp.b);
        Ok(sp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisCheck {
    /// `h/(2a) − ε`.
    pub eps_vs_h: f64,
    /// `1/(2Λ(τ)) − ε`.
    pub eps_vs_lambda: f64,
    /// `1/Λ(τ) − h`.
    pub h_vs_lambda: f64,
    pub passed: bool,
}

/// `ε < min{h/(2a), 1/(2Λ(τ))}` and `h ≤ 1/Λ(τ)`.
pub fn check_step_hypothesis(eps: f64, h: f64, lambda_tau: f64, a: f64) -> HypothesisCheck {
    let eps_vs_h = h / (2.0 * a) - eps;
    let eps_vs_lambda = 1.0 / (2.0 * lambda_tau) - eps;
    let h_vs_lambda = 1.0 / lambda_tau - h;
    HypothesisCheck {
        eps_vs_h,
        eps_vs_lambda,
        h_vs_lambda,
        passed: eps < h / (2.0 * a) && eps < 1.0 / (2.0 * lambda_tau) && h <= 1.0 / lambda_tau,
    }
}

#[derive(Debug, Clone)]
pub struct HomologicalSolution {
    pub generator: TrigVectorField,
    /// Smallest `|⟨k, ω⟩|` over the support, `+∞` for an empty support.
    pub min_divisor: f64,
    pub divisor_bound: f64,
    /// `‖[F, N] − P̃‖₀`.
    pub residual: f64,
}

/// Solves `[F, N] = P̃` for mean-free `P̃` and `N = ω`:
/// `F_k = p̃_k / (i⟨k, ω⟩)`.
///
/// Every support mode must lie within the certified order of `fd` and satisfy
/// `|⟨k, ω⟩| >= 1/Δ(τ)`. The frequency `ω` is the current normal form, which
/// stays within `h` of the certified `ω*`.
pub fn solve_homological(
    p_tilde: &TrigVectorField,
    omega: &[f64],
    fd: &FrequencyDomain,
    delta: &ApproxFn,
    tau: f64,
) -> Result<HomologicalSolution, StepError> {
    if omega.len() != p_tilde.n() {
        return Err(FieldError::Dimension { expected: p_tilde.n(), got: omega.len() }.into());
    }
    let bound = 1.0 / delta.delta(tau)?;
    let mut generator = TrigVectorField::zero(p_tilde.n(), p_tilde.is_real());
    let mut min_divisor = f64::INFINITY;
    for (k, v) in p_tilde.modes() {
        if k.is_zero() {
            if v.iter().any(|z| *z != Complex64::new(0.0, 0.0)) {
                return Err(StepError::MeanNotRemoved);
            }
            continue;
        }
        if k.norm() > fd.k_cert {
            return Err(StepError::Uncertified { k: k.clone(), k_cert: fd.k_cert });
        }
        let d = dot(k, omega);
        if !(d.abs() >= bound) {
            return Err(StepError::Divisor { k: k.clone(), divisor: d.abs(), bound });
        }
        min_divisor = min_divisor.min(d.abs());
        // 1/(i d) = −i/d
        let c = Complex64::new(0.0, -1.0 / d);
        generator.insert_raw(k.clone(), v.iter().map(|z| z * c).collect());
    }
    let n_field = TrigVectorField::constant_real(omega);
    let residual = lie_bracket(&generator, &n_field)?.sub(p_tilde)?.weighted_norm(0.0);
    let limit = 1e-13 * p_tilde.weighted_norm(0.0);
    if residual > limit {
        return Err(StepError::Residual { residual, limit });
    }
    Ok(HomologicalSolution { generator, min_divisor, divisor_bound: bound, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepOptions {
    /// Modes of `P₊` whose weighted size on the output strip is below
    /// `prune_rel · ε` are dropped and charged to the tail.
    pub prune_rel: f64,
    /// Optional hard cap on `|k|` for `P₊`.
    pub k_max: Option<u32>,
    /// Lie series are truncated once their tail bound is below `tail_rel · ε`.
    pub tail_rel: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { prune_rel: 1e-18, k_max: None, tail_rel: 1e-16 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub params: StepParams,
    #[serde(rename = "F")]
    pub generator: TrigVectorField,
    pub p0: Vec<f64>,
    pub omega_in: Vec<f64>,
    pub s_in: f64,
    pub h_in: f64,
    pub s_out: f64,
    /// `h − 2aε`, the width on which the parameter map is controlled.
    pub h_out_phi: f64,
    /// `h − 2ε`, the width on which the new perturbation is controlled.
    pub h_out_p: f64,
    pub eps_in: f64,
    pub eps_in_measured: f64,
    pub eps_out_budget: f64,
    pub eps_out_measured: f64,
    pub tail_charge: f64,
    pub series_terms: usize,
    pub generator_norm: f64,
    pub generator_budget: f64,
    pub larger_domain: LargerDomainCheck,
    pub min_divisor: f64,
    pub divisor_bound: f64,
    pub residual: f64,
    pub modes_out: usize,
}

/// One step at the current normal form `ω`.
///
/// `sp.eps` is the budget `ε` for `‖P‖_s`; a step whose measured output plus
/// discarded tails exceeds `q ε` is rejected with its full record.
#[allow(clippy::too_many_arguments)]
pub fn kam_step(
    p: &TrigVectorField,
    s: f64,
    h: f64,
    omega: &[f64],
    fd: &FrequencyDomain,
    delta: &ApproxFn,
    sp: &StepParams,
    opts: &StepOptions,
) -> Result<(TrigVectorField, StepRecord), StepError> {
    let eps = sp.eps;
    if !(2.0 * sp.sigma < s) {
        return Err(StepError::Params(format!("need 2 sigma < s, got sigma = {}, s = {s}", sp.sigma)));
    }
    let measured_in = p.weighted_norm(s);
    if measured_in > eps {
        return Err(StepError::InputNorm { measured: measured_in, eps });
    }
    let hyp = check_step_hypothesis(eps, h, sp.lambda_tau, sp.a);
    if !hyp.passed {
        return Err(StepError::Hypothesis(hyp));
    }

    let (p_tilde, p_hat) = p.split_ir_uv(sp.tau, sp.sigma, sp.a)?;
    let p_mean = p_tilde.mean_field();
    let larger = check_larger_domain_bound(&p_tilde, s, sp.sigma, sp.a, eps);
    if !larger.holds() {
        return Err(StepError::LargerDomain(larger));
    }
    let sol = solve_homological(&p_tilde.without_mean(), omega, fd, delta, sp.tau)?;
    let f = sol.generator;
    let generator_norm = f.weighted_norm(s + sp.sigma_tilde);
    let generator_budget = sp.lambda_tau * sp.sigma * eps;
    if generator_norm > generator_budget {
        return Err(StepError::Generator { norm: generator_norm, bound: generator_budget });
    }

    let r = s - sp.sigma;
    let budget = PullbackBudget::new(&f, r, sp.sigma, 1.0 / sp.a)?;
    let tol = opts.tail_rel * eps;
    let hat_norm = p_hat.weighted_norm(r);
    let a0 = lie_bracket(&p_tilde, &f)?.weighted_norm(r);
    let b0 = lie_bracket(&p_mean, &f)?.weighted_norm(r);
    let n_trunc = budget.truncation_for(tol, |b| b.tail_bound(hat_norm, 1.0) + b.integrated_tail_bound(a0, b0));
    let budget = budget.with_truncation(n_trunc);
    let pulled = lie_pullback(&f, &p_hat, 1.0, &budget)?;
    let integrated = integrated_pullback_bracket(&p_tilde, &p_mean, &f, &budget)?;
    let mut p_plus = pulled.field.add(&integrated.field)?;
    let s_out = s - 2.0 * sp.sigma;
    let pruned = p_plus.prune(s_out, opts.prune_rel * eps, opts.k_max);
    let tail_charge = pulled.tail_bound + integrated.tail_bound + pruned;
    let eps_out_measured = p_plus.weighted_norm(s_out);

    let p0: Vec<f64> = p_mean.mean_value().iter().map(|z| z.re).collect();
    let record = StepRecord {
        params: *sp,
        generator: f,
        p0,
        omega_in: omega.to_vec(),
        s_in: s,
        h_in: h,
        s_out,
        h_out_phi: h - 2.0 * sp.a * eps,
        h_out_p: h - 2.0 * eps,
        eps_in: eps,
        eps_in_measured: measured_in,
        eps_out_budget: sp.q * eps,
        eps_out_measured,
        tail_charge,
        series_terms: n_trunc + 1,
        generator_norm,
        generator_budget,
        larger_domain: larger,
        min_divisor: sol.min_divisor,
        divisor_bound: sol.divisor_bound,
        residual: sol.residual,
        modes_out: p_plus.len(),
    };
    if eps_out_measured + tail_charge > record.eps_out_budget {
        return Err(StepError::Certificate(Box::new(record)));
    }
    Ok((p_plus, record))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error("need 0 <= eps < h/2, got eps = {eps}, h = {h}")]
    Hypothesis { eps: f64, h: f64 },
    #[error("sup |f - id| = {sup:e} on the sampled domain exceeds eps = {eps:e}")]
    ShiftTooLarge { sup: f64, eps: f64 },
    #[error("fixed-point iteration did not settle in {0} iterations")]
    NoConvergence(usize),
}

pub const INVERSE_MAX_ITER: usize = 200;
pub const INVERSE_STEP_TOL: f64 = 1e-14;

/// Inverse of `f = id + g` on the polydisc of radius `h − 2ε` around `ω*`,
/// realized pointwise by `φ ← w − g(φ)`.
pub struct NearIdentityInverse<G> {
    shift: G,
    pub omega_star: Vec<f64>,
    pub h: f64,
    pub eps: f64,
    /// `max |f(φ(w)) − w|` over the samples.
    pub residual_max: f64,
    /// `max |φ(w) − w|` over the samples.
    pub displacement_max: f64,
    pub max_iterations: usize,
    pub samples: usize,
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Points of the distinguished boundary of the polydisc of radius `rho` plus
/// its centre, `m` angles per axis (capped so the total stays moderate).
fn polydisc_samples(center: &[f64], rho: f64, m: usize) -> Vec<Vec<Complex64>> {
    let n = center.len();
    let mut out = vec![center.iter().map(|&c| Complex64::new(c, 0.0)).collect::<Vec<_>>()];
    let total = m.checked_pow(n as u32).unwrap_or(usize::MAX).min(1 << 16);
    for idx in 0..total {
        let mut rem = idx;
        let mut point = Vec::with_capacity(n);
        for &c in center {
            let j = rem % m;
            rem /= m;
            let angle = std::f64::consts::TAU * j as f64 / m as f64;
            point.push(Complex64::new(c, 0.0) + Complex64::from_polar(rho, angle));
        }
        out.push(point);
    }
    out
}

impl<G: Fn(&[Complex64]) -> Vec<Complex64>> NearIdentityInverse<G> {
    pub fn eval(&self, w: &[Complex64]) -> Result<(Vec<Complex64>, usize), InverseError> {
        let mut phi = w.to_vec();
        for it in 1..=INVERSE_MAX_ITER {
            let g = (self.shift)(&phi);
            let next: Vec<Complex64> = w.iter().zip(&g).map(|(a, b)| a - b).collect();
            let step = next.iter().zip(&phi).fold(0.0, |m: f64, (a, b)| m.max((a - b).norm()));
            phi = next;
            if step <= INVERSE_STEP_TOL {
                return Ok((phi, it));
            }
        }
        Err(InverseError::NoConvergence(INVERSE_MAX_ITER))
    }

    pub fn eval_real(&self, w: &[f64]) -> Result<Vec<f64>, InverseError> {
        let wc: Vec<Complex64> = w.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Ok(self.eval(&wc)?.0.iter().map(|z| z.re).collect())
    }
}

/// Builds the inverse of `ω ↦ ω + shift(ω)` and certifies it on samples of
/// `Ω_{h−2ε}` after checking `sup |shift| <= ε` on samples of `Ω_h`.
pub fn invert_near_identity<G: Fn(&[Complex64]) -> Vec<Complex64>>(
    shift: G,
    omega_star: &[f64],
    h: f64,
    eps: f64,
    samples_per_axis: usize,
) -> Result<NearIdentityInverse<G>, InverseError> {
    if !(eps >= 0.0 && eps < h / 2.0) {
        return Err(InverseError::Hypothesis { eps, h });
    }
    let m = samples_per_axis.max(1);
    let sup = polydisc_samples(omega_star, h, m).iter().map(|w| max_abs(&shift(w))).fold(0.0, f64::max);
    if sup > eps {
        return Err(InverseError::ShiftTooLarge { sup, eps });
    }
    let mut inv = NearIdentityInverse {
        shift,
        omega_star: omega_star.to_vec(),
        h,
        eps,
        residual_max: 0.0,
        displacement_max: 0.0,
        max_iterations: 0,
        samples: 0,
    };
    let pts = polydisc_samples(omega_star, h - 2.0 * eps, m);
    for w in &pts {
        let (phi, it) = inv.eval(w)?;
        let g = (inv.shift)(&phi);
        let res = phi.iter().zip(&g).zip(w).fold(0.0, |acc: f64, ((p, gi), wi)| acc.max((p + gi - wi).norm()));
        let disp = phi.iter().zip(w).fold(0.0, |acc: f64, (p, wi)| acc.max((p - wi).norm()));
        inv.residual_max = inv.residual_max.max(res);
        inv.displacement_max = inv.displacement_max.max(disp);
        inv.max_iterations = inv.max_iterations.max(it);
    }
    inv.samples = pts.len();
    Ok(inv)
}

/// Time rescaling that brings the Diophantine constant to `α = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Rescaling {
    /// `2/α`; fields, frequencies and widths `h` are multiplied by it.
    pub factor: f64,
    pub alpha_original: f64,
}

impl Rescaling {
    pub fn identity() -> Self {
        Rescaling { factor: 1.0, alpha_original: 2.0 }
    }

    pub fn to_original(&self, x: f64) -> f64 {
        x / self.factor
    }

    pub fn to_normalized(&self, x: f64) -> f64 {
        x * self.factor
    }
}

/// Multiplies `P`, `ω*` and `h` by `2/α`. Flows of generators are unaffected:
/// pullbacks are linear, so the same diffeomorphism conjugates both scalings.
pub fn normalize_alpha(
    p: &TrigVectorField,
    fd: &FrequencyDomain,
) -> Result<(TrigVectorField, FrequencyDomain, Rescaling), StepError> {
    if !(fd.alpha > 0.0 && fd.alpha.is_finite()) {
        return Err(StepError::Params(format!("alpha = {} must be positive", fd.alpha)));
    }
    let factor = 2.0 / fd.alpha;
    let scaled_fd = FrequencyDomain {
        omega_star: fd.omega_star.iter().map(|w| w * factor).collect(),
        h: fd.h * factor,
        alpha: 2.0,
        k_cert: fd.k_cert,
    };
    Ok((p.scaled(factor), scaled_fd, Rescaling { factor, alpha_original: fd.alpha }))
}
