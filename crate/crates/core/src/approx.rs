//! Rüssmann approximation functions and Diophantine certification.
//!
//! An approximation function `Δ: [1, ∞) → [1, ∞)` is non-decreasing, unbounded,
//! has `Δ(1) = 1` and a convergent integral `∫ log Δ(t) / t² dt`. Its companion
//! `Λ(t) = t Δ(t)` controls the size of the cutoff-dependent constants of the
//! iteration, and the tail integral `∫_τ^∞ log Λ(t) / t² dt` controls the total
//! loss of analyticity width.
//!
//! Two kinds are provided: the power law `Δ(t) = t^ρ`, and a monotone table
//! interpolated log-log (piecewise power law), extrapolated past its last knot
//! with the exponent of the final segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{for_each_canonical_in_shell, MultiIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("argument {value} outside the domain t >= 1")]
    Domain { value: f64 },
    #[error("invalid approximation function: {0}")]
    Invalid(String),
    #[error("tail integral does not converge beyond t = {at}")]
    Divergent { at: f64 },
    #[error("invalid frequency domain: {0}")]
    Frequency(String),
    #[error("certification order {requested} exceeds the cap {cap} for dimension {n}")]
    OrderTooLarge { requested: u32, cap: u32, n: usize },
}

/// Descriptor of an approximation function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApproxKind {
    /// `Δ(t) = t^ρ`.
    Power { rho: f64 },
    /// Knots `(t_i, Δ(t_i))`, starting at `(1, 1)`.
    Table { points: Vec<(f64, f64)> },
}

/// One log-log segment: on `[t_lo, ∞)` (until the next knot) we have
/// `log Λ(t) = intercept + slope · log t`, where `slope = 1 + local exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    t_lo: f64,
    intercept: f64,
    slope: f64,
}

impl Segment {
    fn log_lambda(&self, t: f64) -> f64 {
        self.intercept + self.slope * t.ln()
    }

    /// Antiderivative of `log Λ(t) / t²` is `-(A + B + B log t) / t`.
    fn primitive(&self, t: f64) -> f64 {
        -(self.intercept + self.slope + self.slope * t.ln()) / t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ApproxKind", into = "ApproxKind")]
pub struct ApproxFn {
    kind: ApproxKind,
    segments: Vec<Segment>,
}

impl TryFrom<ApproxKind> for ApproxFn {
    type Error = ApproxError;

    fn try_from(kind: ApproxKind) -> Result<Self, Self::Error> {
        match kind {
            ApproxKind::Power { rho } => ApproxFn::power(rho),
            ApproxKind::Table { points } => ApproxFn::table(points),
        }
    }
}

impl From<ApproxFn> for ApproxKind {
    fn from(f: ApproxFn) -> Self {
        f.kind
    }
}

/// Value of the tail integral together with a bound on its numerical error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailIntegral {
    pub value: f64,
    pub error_bound: f64,
}

impl ApproxFn {
    /// `Δ(t) = t^ρ`. `ρ = 0` is accepted as the degenerate `Λ(t) = t`.
    pub fn power(rho: f64) -> Result<Self, ApproxError> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(ApproxError::Invalid(format!("power-law exponent {rho} must be >= 0")));
        }
        Ok(ApproxFn {
            kind: ApproxKind::Power { rho },
            segments: vec![Segment { t_lo: 1.0, intercept: 0.0, slope: 1.0 + rho }],
        })
    }

    pub fn table(points: Vec<(f64, f64)>) -> Result<Self, ApproxError> {
        if points.len() < 2 {
            return Err(ApproxError::Invalid("table needs at least two knots".into()));
        }
        if points[0] != (1.0, 1.0) {
            return Err(ApproxError::Invalid("table must start at (1, 1)".into()));
        }
        let mut segments = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            let ((t0, d0), (t1, d1)) = (w[0], w[1]);
            if !(t1.is_finite() && d1.is_finite()) || t1 <= t0 {
                return Err(ApproxError::Invalid(format!("knots must be finite with increasing t (at t = {t1})")));
            }
            if d1 < d0 {
                return Err(ApproxError::Invalid(format!("table decreases between t = {t0} and t = {t1}")));
            }
            let exponent = (d1 / d0).ln() / (t1 / t0).ln();
            segments.push(Segment {
                t_lo: t0,
                intercept: d0.ln() - exponent * t0.ln(),
                slope: 1.0 + exponent,
            });
        }
        Ok(ApproxFn { kind: ApproxKind::Table { points }, segments })
    }

    pub fn kind(&self) -> &ApproxKind {
        &self.kind
    }

    fn segment_at(&self, t: f64) -> &Segment {
        let idx = self.segments.partition_point(|s| s.t_lo <= t);
        &self.segments[idx.saturating_sub(1)]
    }

    fn check_domain(t: f64) -> Result<(), ApproxError> {
        if t >= 1.0 {
            Ok(())
        } else {
            Err(ApproxError::Domain { value: t })
        }
    }

    /// `Δ(t)`.
    pub fn delta(&self, t: f64) -> Result<f64, ApproxError> {
        Self::check_domain(t)?;
        Ok(match self.kind {
            ApproxKind::Power { rho } => t.powf(rho),
            ApproxKind::Table { .. } => self.eval_lambda(t)? / t,
        })
    }

    /// `Λ(t) = t Δ(t)`.
    pub fn eval_lambda(&self, t: f64) -> Result<f64, ApproxError> {
        Self::check_domain(t)?;
        Ok(match self.kind {
            ApproxKind::Power { rho } => t.powf(1.0 + rho),
            ApproxKind::Table { .. } => self.segment_at(t).log_lambda(t).exp(),
        })
    }

    /// `sup { t >= 1 : Λ(t) <= y }`.
    ///
    /// `Λ` is strictly increasing, so this is the ordinary inverse. Both kinds
    /// are piecewise power laws and invert in closed form on the right segment.
    pub fn lambda_inverse(&self, y: f64) -> Result<f64, ApproxError> {
        Self::check_domain(y)?;
        let ly = y.ln();
        // last segment whose left end already satisfies Λ(t_lo) <= y
        let idx = self.segments.partition_point(|s| s.log_lambda(s.t_lo) <= ly);
        let seg = &self.segments[idx.saturating_sub(1)];
        let t = ((ly - seg.intercept) / seg.slope).exp();
        Ok(t.max(1.0))
    }

    /// `∫_τ^∞ log Λ(t) / t² dt`.
    ///
    /// Integrated exactly segment by segment; the tail past the last knot is the
    /// power-law extrapolation. The error bound covers floating-point rounding.
    pub fn russmann_integral(&self, tau: f64) -> Result<TailIntegral, ApproxError> {
        Self::check_domain(tau)?;
        if tau.is_infinite() {
            return Ok(TailIntegral { value: 0.0, error_bound: 0.0 });
        }
        let first = self.segments.partition_point(|s| s.t_lo <= tau).saturating_sub(1);
        let mut value = 0.0;
        let mut magnitude = 0.0;
        for (i, seg) in self.segments.iter().enumerate().skip(first) {
            let lo = if i == first { tau } else { seg.t_lo };
            let piece = match self.segments.get(i + 1) {
                Some(next) => seg.primitive(next.t_lo) - seg.primitive(lo),
                None => {
                    if seg.slope <= 0.0 || !seg.slope.is_finite() {
                        return Err(ApproxError::Divergent { at: lo });
                    }
                    -seg.primitive(lo)
                }
            };
            value += piece;
            magnitude += piece.abs() + seg.primitive(lo).abs();
        }
        if !value.is_finite() {
            return Err(ApproxError::Divergent { at: tau });
        }
        Ok(TailIntegral { value, error_bound: 16.0 * f64::EPSILON * magnitude })
    }
}

/// A fixed frequency `ω*` with the data of its complex neighbourhood and the
/// order up to which its Diophantine condition has been certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDomain {
    pub omega_star: Vec<f64>,
    pub h: f64,
    pub alpha: f64,
    /// Largest `|k|` for which `|⟨k, ω*⟩| >= α / Δ(|k|)` has been verified.
    pub k_cert: u32,
}

impl FrequencyDomain {
    pub fn new(omega_star: Vec<f64>, h: f64, alpha: f64) -> Result<Self, ApproxError> {
        if omega_star.is_empty() || omega_star.iter().any(|w| !w.is_finite()) {
            return Err(ApproxError::Frequency("frequency must be a finite non-empty vector".into()));
        }
        if !(h > 0.0) || !(alpha > 0.0) {
            return Err(ApproxError::Frequency(format!("need h > 0 and alpha > 0, got h = {h}, alpha = {alpha}")));
        }
        Ok(FrequencyDomain { omega_star, h, alpha, k_cert: 0 })
    }

    pub fn n(&self) -> usize {
        self.omega_star.len()
    }

    pub fn omega_max_norm(&self) -> f64 {
        self.omega_star.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Raises `k_cert` to the report's order if the scan shows this domain's
    /// `α` is admissible up to that order. Returns whether it was accepted.
    pub fn apply_certification(&mut self, report: &CertificationReport) -> bool {
        let accepted = self.alpha <= report.alpha_max && report.omega == self.omega_star;
        if accepted {
            self.k_cert = self.k_cert.max(report.k_max);
        }
        accepted
    }
}

/// Default cap on brute-force certification orders.
pub fn max_certification_order(n: usize) -> u32 {
    match n {
        0 | 1 => 100_000,
        2 => 200,
        3 => 60,
        4 => 30,
        _ => 16,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub k: MultiIndex,
    pub divisor: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub omega: Vec<f64>,
    pub k_max: u32,
    pub alpha_tested: f64,
    pub modes_scanned: u64,
    /// `min |⟨k, ω⟩|` over `0 < |k| <= K`.
    pub min_divisor: f64,
    pub min_divisor_at: MultiIndex,
    /// `min |⟨k, ω⟩| Δ(|k|)`: the largest admissible `α` at this order.
    pub alpha_max: f64,
    pub alpha_max_at: MultiIndex,
    pub passed: bool,
    /// Violating modes, first 32 in scan order.
    pub violations: Vec<Violation>,
    pub violation_count: u64,
    /// Modes whose margin is within rounding of the threshold.
    pub indeterminate_count: u64,
}

pub(crate) fn dot(k: &MultiIndex, omega: &[f64]) -> f64 {
    k.components().iter().zip(omega).map(|(&ki, &w)| f64::from(ki) * w).sum()
}

/// Brute-force scan of `|⟨k, ω*⟩| >= α / Δ(|k|)` over `0 < |k| <= K`, shell by
/// shell. Only one of `±k` is visited.
pub fn certify_diophantine(fd: &FrequencyDomain, delta: &ApproxFn, k_max: u32) -> Result<CertificationReport, ApproxError> {
    let n = fd.n();
    let cap = max_certification_order(n);
    if k_max == 0 {
        return Err(ApproxError::Invalid("certification order must be >= 1".into()));
    }
    if k_max > cap {
        return Err(ApproxError::OrderTooLarge { requested: k_max, cap, n });
    }
    let omega = &fd.omega_star;
    let omega_norm = fd.omega_max_norm();
    let mut report = CertificationReport {
        omega: omega.clone(),
        k_max,
        alpha_tested: fd.alpha,
        modes_scanned: 0,
        min_divisor: f64::INFINITY,
        min_divisor_at: MultiIndex::zero(n),
        alpha_max: f64::INFINITY,
        alpha_max_at: MultiIndex::zero(n),
        passed: true,
        violations: Vec::new(),
        violation_count: 0,
        indeterminate_count: 0,
    };
    for m in 1..=k_max {
        let weight = delta.delta(f64::from(m))?;
        let threshold = fd.alpha / weight;
        let slack = 1e-12 * f64::from(m) * omega_norm;
        for_each_canonical_in_shell(n, m, |k| {
            report.modes_scanned += 1;
            let divisor = dot(k, omega).abs();
            let weighted = divisor * weight;
            if divisor < report.min_divisor {
                report.min_divisor = divisor;
                report.min_divisor_at = k.clone();
            }
            if weighted < report.alpha_max {
                report.alpha_max = weighted;
                report.alpha_max_at = k.clone();
            }
            if (divisor - threshold).abs() <= slack {
                report.indeterminate_count += 1;
            }
            if divisor < threshold {
                report.passed = false;
                report.violation_count += 1;
                if report.violations.len() < 32 {
                    report.violations.push(Violation { k: k.clone(), divisor, weighted });
                }
            }
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirichletReport {
    pub min_divisor: f64,
    pub bound: f64,
    /// `min_divisor <= bound`.
    pub holds: bool,
}

/// `min_{0<|k|<=K} |⟨k, ω*⟩|` against Dirichlet's `|ω*| / K^{n-1}`.
pub fn dirichlet_bound(fd: &FrequencyDomain, k_max: u32) -> Result<DirichletReport, ApproxError> {
    if k_max == 0 {
        return Err(ApproxError::Invalid("order must be >= 1".into()));
    }
    let n = fd.n();
    let mut min_divisor = f64::INFINITY;
    for m in 1..=k_max {
        for_each_canonical_in_shell(n, m, |k| {
            min_divisor = min_divisor.min(dot(k, &fd.omega_star).abs());
        });
    }
    let bound = fd.omega_max_norm() / f64::from(k_max).powi(n as i32 - 1);
    Ok(DirichletReport { min_divisor, bound, holds: min_divisor <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> Vec<f64> {
        vec![1.0, (1.0 + 5f64.sqrt()) / 2.0]
    }

    /// Composite Simpson after `t = τ eˣ`, which turns the tail into
    /// `∫_0^∞ log Λ(τ eˣ) e^{-x} dx / τ`. Breakpoints are kept as panel edges.
    fn tail_quadrature(f: &ApproxFn, tau: f64, breaks: &[f64]) -> f64 {
        let g = |x: f64| f.eval_lambda(tau * x.exp()).unwrap().ln() * (-x).exp();
        let mut edges = vec![0.0];
        edges.extend(breaks.iter().filter(|&&b| b > tau).map(|b| (b / tau).ln()));
        edges.push(80.0);
        let mut total = 0.0;
        for w in edges.windows(2) {
            let n = 20_000;
            let h = (w[1] - w[0]) / n as f64;
            let mut acc = g(w[0]) + g(w[1]);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(w[0] + i as f64 * h);
            }
            total += acc * h / 3.0;
        }
        total / tau
    }

    #[test]
    fn lambda_values() {
        let sq = ApproxFn::power(2.0).unwrap();
        assert_eq!(sq.eval_lambda(1.0).unwrap(), 1.0);
        assert_eq!(sq.eval_lambda(2.0).unwrap(), 8.0);
        let f = ApproxFn::power(2.5).unwrap();
        assert!((f.eval_lambda(3.0).unwrap() - 46.765).abs() < 1e-3);
        assert!(matches!(sq.eval_lambda(0.5), Err(ApproxError::Domain { .. })));
    }

    #[test]
    fn lambda_inverse_values() {
        let sq = ApproxFn::power(2.0).unwrap();
        assert!((sq.lambda_inverse(8.0).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(sq.lambda_inverse(1.0).unwrap(), 1.0);
        // bisection oracle
        let (mut lo, mut hi) = (1.0f64, 1000.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid * mid <= 1000.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let got = sq.lambda_inverse(1000.0).unwrap();
        assert!((got - lo).abs() < 1e-10 * lo);
        assert!((got - 9.9999).abs() < 1e-3);
    }

    #[test]
    fn integral_closed_forms_match_quadrature() {
        let lin = ApproxFn::power(0.0).unwrap();
        let v = lin.russmann_integral(1.0).unwrap().value;
        assert!((v - 1.0).abs() < 1e-14);
        assert!((tail_quadrature(&lin, 1.0, &[]) - 1.0).abs() < 1e-8);

        let cube = ApproxFn::power(2.0).unwrap();
        let e = std::f64::consts::E;
        let v = cube.russmann_integral(e).unwrap().value;
        assert!((v - 6.0 / e).abs() < 1e-12);
        assert!((v - 2.2073).abs() < 1e-4);
        assert!((tail_quadrature(&cube, e, &[]) - v).abs() < 1e-8);
    }

    #[test]
    fn integral_decays() {
        let cube = ApproxFn::power(2.0).unwrap();
        let tau = 1e8;
        assert!(cube.russmann_integral(tau).unwrap().value <= 1e-6);
        assert!(matches!(cube.russmann_integral(0.9), Err(ApproxError::Domain { .. })));
    }

    #[test]
    fn table_matches_power_law_when_sampled_from_one() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 10.0, 50.0].iter().map(|&t: &f64| (t, t.powi(2))).collect();
        let tab = ApproxFn::table(pts).unwrap();
        let pow = ApproxFn::power(2.0).unwrap();
        for &t in &[1.0, 1.5, 3.0, 7.7, 20.0, 400.0] {
            let (a, b) = (tab.eval_lambda(t).unwrap(), pow.eval_lambda(t).unwrap());
            assert!((a - b).abs() <= 1e-12 * b, "t = {t}");
        }
        for &tau in &[1.0, 3.0, 60.0] {
            let a = tab.russmann_integral(tau).unwrap().value;
            let b = pow.russmann_integral(tau).unwrap().value;
            assert!((a - b).abs() <= 1e-12 * b);
        }
        assert!((tab.lambda_inverse(1000.0).unwrap() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn table_kink_integral_against_quadrature() {
        let tab = ApproxFn::table(vec![(1.0, 1.0), (4.0, 2.0), (9.0, 30.0), (20.0, 31.0)]).unwrap();
        for &tau in &[1.0, 2.5, 9.0, 15.0, 40.0] {
            let exact = tab.russmann_integral(tau).unwrap();
            let quad = tail_quadrature(&tab, tau, &[4.0, 9.0, 20.0]);
            assert!((exact.value - quad).abs() < 1e-10, "tau = {tau}: {} vs {quad}", exact.value);
            assert!(exact.error_bound < 1e-12);
        }
    }

    #[test]
    fn table_validation() {
        assert!(ApproxFn::table(vec![(1.0, 1.0)]).is_err());
        assert!(ApproxFn::table(vec![(2.0, 1.0), (3.0, 2.0)]).is_err());
        assert!(ApproxFn::table(vec![(1.0, 1.0), (3.0, 0.5)]).is_err());
        assert!(ApproxFn::table(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(ApproxFn::power(-1.0).is_err());
    }

    #[test]
    fn certify_golden_order_five() {
        let fd = FrequencyDomain::new(golden(), 1e-3, 1.0).unwrap();
        let rep = certify_diophantine(&fd, &ApproxFn::power(2.0).unwrap(), 5).unwrap();
        assert!((rep.min_divisor - 0.23607).abs() < 1e-5);
        assert_eq!(rep.min_divisor_at.components(), &[3, -2]);
        // |k|² |⟨k, ω⟩| is smallest at k = (1, 0)
        assert!((rep.alpha_max - 1.0).abs() < 1e-15);
        assert!(rep.passed);
        // all 2·5·6/2 canonical modes visited
        assert_eq!(rep.modes_scanned, 30);
    }

    #[test]
    fn certify_one_dimensional_and_resonant() {
        let fd = FrequencyDomain::new(vec![1.0], 1.0, 1.0).unwrap();
        let rep = certify_diophantine(&fd, &ApproxFn::power(1.0).unwrap(), 7).unwrap();
        assert_eq!(rep.min_divisor, 1.0);

        let fd = FrequencyDomain::new(vec![1.0, 2.0], 1.0, 1e-9).unwrap();
        let sq = ApproxFn::power(2.0).unwrap();
        let rep = certify_diophantine(&fd, &sq, 3).unwrap();
        assert_eq!(rep.min_divisor, 0.0);
        assert_eq!(rep.min_divisor_at.components(), &[2, -1]);
        assert!(!rep.passed);
        assert!(rep.violations.iter().any(|v| v.k.components() == [2, -1]));
        // (2, -1) has sum-norm 3 and is not scanned at order 2
        let rep2 = certify_diophantine(&fd, &sq, 2).unwrap();
        assert_eq!(rep2.min_divisor, 1.0);
    }

    #[test]
    fn certification_updates_k_cert() {
        let mut fd = FrequencyDomain::new(golden(), 1e-3, 1.0).unwrap();
        let sq = ApproxFn::power(2.0).unwrap();
        let rep = certify_diophantine(&fd, &sq, 40).unwrap();
        assert!(fd.apply_certification(&rep));
        assert_eq!(fd.k_cert, 40);
        fd.alpha = 1.5;
        let rep = certify_diophantine(&fd, &sq, 50).unwrap();
        assert!(!rep.passed);
        assert!(!fd.apply_certification(&rep));
        assert_eq!(fd.k_cert, 40);
        assert!(matches!(certify_diophantine(&fd, &sq, 10_000), Err(ApproxError::OrderTooLarge { .. })));
    }

    #[test]
    fn dirichlet_examples() {
        let fd = FrequencyDomain::new(vec![1.0, 1.6180339887], 1.0, 1.0).unwrap();
        let d = dirichlet_bound(&fd, 5).unwrap();
        assert!((d.min_divisor - 0.23607).abs() < 1e-5);
        assert!((d.bound - 0.32361).abs() < 1e-5);
        assert!(d.holds);
        let d = dirichlet_bound(&fd, 1).unwrap();
        assert_eq!(d.min_divisor, 1.0);
        assert!((d.bound - 1.6180339887).abs() < 1e-12);
        let fd = FrequencyDomain::new(vec![1.0, 2.0], 1.0, 1.0).unwrap();
        let d = dirichlet_bound(&fd, 3).unwrap();
        assert_eq!(d.min_divisor, 0.0);
        assert!((d.bound - 2.0 / 3.0).abs() < 1e-15);
    }
}
