//! Numerical verification of a computed conjugacy.
//!
//! A run produces generators `F^{(0)}, …, F^{(M−1)}` and the accumulated shift
//! `S = Σ p₀^{(ν)}`. With `Φ = Φ₀ ∘ Φ₁ ∘ … ∘ Φ_{M−1}` (each `Φ_ν` the time-1
//! map of `F^{(ν)}`) the perturbed field `ω* + P` is carried into the
//! rotation `ω = ω* + S`, i.e. `Φ^*(φ(ω) + P) = ω` with `φ(ω) = ω − S`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{flow_map_eval, ode::Dopri5, ode::OdeError, ode::OdeOptions, CalculusError};
use crate::fourier::{FieldError, TrigVectorField};
use crate::kamstep::Rescaling;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("orbit integration failed: {0}")]
    Orbit(#[from] OdeError),
    #[error("inconsistent conjugacy data: {0}")]
    Inconsistent(String),
}

/// Finite-difference step for `DΦ`.
pub const FD_STEP: f64 = 1e-5;
/// Sample times per orbit comparison.
pub const ORBIT_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjugacy {
    /// Generators in step order; the time-1 maps do not depend on the time
    /// scaling.
    pub generators: Vec<TrigVectorField>,
    /// `S` in normalized units.
    pub total_shift: Vec<f64>,
    pub rescaling: Rescaling,
    /// Certified frequency in normalized units.
    pub omega_star: Vec<f64>,
    pub s_final: f64,
    pub h_final: f64,
}

impl Conjugacy {
    pub fn identity(omega_star: Vec<f64>, rescaling: Rescaling, s: f64, h: f64) -> Self {
        let n = omega_star.len();
        Conjugacy { generators: Vec::new(), total_shift: vec![0.0; n], rescaling, omega_star, s_final: s, h_final: h }
    }

    pub fn n(&self) -> usize {
        self.omega_star.len()
    }

    /// `ω* + S` in normalized units.
    pub fn omega_final(&self) -> Vec<f64> {
        self.omega_star.iter().zip(&self.total_shift).map(|(w, s)| w + s).collect()
    }

    /// The target rotation in the units of the input field.
    pub fn omega_final_original(&self) -> Vec<f64> {
        self.omega_final().iter().map(|&w| self.rescaling.to_original(w)).collect()
    }

    pub fn omega_star_original(&self) -> Vec<f64> {
        self.omega_star.iter().map(|&w| self.rescaling.to_original(w)).collect()
    }

    /// `max_j |S_j|` in original units, i.e. `‖φ − id‖`.
    pub fn shift_norm_original(&self) -> f64 {
        self.rescaling.to_original(self.total_shift.iter().fold(0.0, |m, s| m.max(s.abs())))
    }

    fn check(&self) -> Result<(), VerifyError> {
        let n = self.n();
        if self.total_shift.len() != n || self.generators.iter().any(|g| g.n() != n) {
            return Err(VerifyError::Inconsistent("dimension mismatch between frequency, shift and generators".into()));
        }
        if self.generators.iter().any(|g| !g.is_real()) {
            return Err(VerifyError::Inconsistent("generators must be real".into()));
        }
        Ok(())
    }
}

/// `Φ(θ)` on the lifted torus, applying the last step's flow first.
pub fn conjugacy_eval(c: &Conjugacy, theta: &[f64]) -> Result<Vec<f64>, VerifyError> {
    let mut y = theta.to_vec();
    for g in c.generators.iter().rev() {
        y = flow_map_eval(g, &y, 1.0)?;
    }
    Ok(y)
}

/// Per-component distance on `Tⁿ`, maximized over components.
pub fn toroidal_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        })
        .fold(0.0, f64::max)
}

fn grid_point(idx: usize, n: usize, grid: usize) -> Vec<f64> {
    let mut rem = idx;
    (0..n)
        .map(|_| {
            let j = rem % grid;
            rem /= grid;
            std::f64::consts::TAU * j as f64 / grid as f64
        })
        .collect()
}

/// `DΦ(θ)·ω − Y(Φ(θ))` with `Y = ω* + P` in original units, arranged as
/// `(ω − ω*) + Du·ω − P(Φ(θ))` with `u = Φ − id`, so that only the
/// displacement is differenced.
fn defect_at(c: &Conjugacy, p: &TrigVectorField, shift: &[f64], omega: &[f64], theta: &[f64]) -> Result<(f64, f64), VerifyError> {
    let n = theta.len();
    let phi = conjugacy_eval(c, theta)?;
    let displacement_of = |x: &[f64]| -> Result<Vec<f64>, VerifyError> {
        Ok(conjugacy_eval(c, x)?.iter().zip(x).map(|(a, b)| a - b).collect())
    };
    let mut du_omega = vec![0.0; n];
    for j in 0..n {
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[j] += FD_STEP;
        minus[j] -= FD_STEP;
        let width = plus[j] - minus[j];
        let up = displacement_of(&plus)?;
        let um = displacement_of(&minus)?;
        for i in 0..n {
            du_omega[i] += omega[j] * (up[i] - um[i]) / width;
        }
    }
    let pv = p.eval_real_angles(&phi);
    let defect = (0..n).fold(0.0f64, |m, i| m.max((shift[i] + du_omega[i] - pv[i].re).abs()));
    let displacement = phi.iter().zip(theta).fold(0.0f64, |m, (p, t)| m.max((p - t).abs()));
    Ok((defect, displacement))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub defect_max: f64,
    pub grid: usize,
    /// `max |Φ(θ) − θ|` over the grid.
    pub displacement_max: f64,
}

/// The field `φ(ω) + P = ω* + P` in original units.
pub fn perturbed_field(c: &Conjugacy, p: &TrigVectorField) -> Result<TrigVectorField, VerifyError> {
    if p.n() != c.n() {
        return Err(FieldError::Dimension { expected: c.n(), got: p.n() }.into());
    }
    Ok(TrigVectorField::constant_real(&c.omega_star_original()).add(p)?)
}

/// Maximum over a uniform `grid^n` lattice of `|DΦ(θ)·ω − (φ(ω) + P)(Φ(θ))|`.
///
/// `p` is the perturbation in original units; `DΦ` uses central differences.
pub fn conjugacy_defect(c: &Conjugacy, p: &TrigVectorField, grid: usize) -> Result<DefectReport, VerifyError> {
    c.check()?;
    if p.n() != c.n() {
        return Err(FieldError::Dimension { expected: c.n(), got: p.n() }.into());
    }
    let omega = c.omega_final_original();
    let shift: Vec<f64> = c.total_shift.iter().map(|&x| c.rescaling.to_original(x)).collect();
    let n = c.n();
    let total = grid.checked_pow(n as u32).ok_or_else(|| VerifyError::Inconsistent("grid too large".into()))?;
    let results: Result<Vec<(f64, f64)>, VerifyError> =
        (0..total).into_par_iter().map(|i| defect_at(c, p, &shift, &omega, &grid_point(i, n, grid))).collect();
    // the fold is sequential over an ordered vector, so the maximum is exact
    let (defect_max, displacement_max) = results?.into_iter().fold((0.0f64, 0.0f64), |(d, m), (a, b)| (d.max(a), m.max(b)));
    Ok(DefectReport { defect_max, grid, displacement_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    pub orbit_dev: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub samples: usize,
}

/// Integrates `θ' = (φ(ω) + P)(θ)` from `Φ(θ₀)` and compares with
/// `Φ(θ₀ + ω t)` at equally spaced times in `(0, T]`.
pub fn orbit_compare(c: &Conjugacy, p: &TrigVectorField, theta0: &[f64], t_final: f64) -> Result<OrbitReport, VerifyError> {
    c.check()?;
    let y_field = perturbed_field(c, p)?;
    let omega = c.omega_final_original();
    let eval = y_field.evaluator();
    let opts = OdeOptions { rtol: 1e-12, atol: 1e-12, ..OdeOptions::default() };
    let mut ode = Dopri5::new(|th: &[f64], out: &mut [f64]| eval.eval_into(th, out), c.n(), opts);
    let mut y = conjugacy_eval(c, theta0)?;
    let mut t = 0.0;
    let mut dev: f64 = 0.0;
    for i in 1..=ORBIT_SAMPLES {
        let t_next = t_final * i as f64 / ORBIT_SAMPLES as f64;
        ode.advance(&mut y, t, t_next)?;
        t = t_next;
        let rotated: Vec<f64> = theta0.iter().zip(&omega).map(|(a, w)| a + w * t).collect();
        dev = dev.max(toroidal_distance(&y, &conjugacy_eval(c, &rotated)?));
    }
    Ok(OrbitReport { orbit_dev: dev, t_final, samples: ORBIT_SAMPLES })
}

/// Local integrator tolerance used in the orbit comparison.
pub const ORBIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    /// Lipschitz bound `Σ |k| |p_k|` of the perturbed field.
    pub lipschitz: f64,
    /// `T (defect + tol) e^{L T}`.
    pub rhs: f64,
    pub holds: bool,
}

/// Orbit deviation against `T (defect + tol) e^{LT}`.
pub fn gronwall_check(orbit_dev: f64, defect: f64, lipschitz: f64, t_final: f64) -> GronwallCheck {
    let rhs = t_final * (defect + ORBIT_TOL) * (lipschitz * t_final).exp();
    GronwallCheck { lipschitz, rhs, holds: orbit_dev <= rhs }
}

/// The verification block of a run report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub defect_max: f64,
    pub grid: usize,
    pub orbit_dev: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub phi_shift_norm: f64,
    #[serde(rename = "Phi_dist_bound")]
    pub phi_dist_bound: f64,
    /// `max |Φ(θ) − θ|` on the real grid.
    pub phi_displacement_max: f64,
    pub gronwall: GronwallCheck,
}

/// Runs both checks. `generator_norm_sum` is `Σ_ν ‖F^{(ν)}‖` as recorded by
/// the steps and is echoed as the bound on `Φ − id`.
pub fn verify_conjugacy(
    c: &Conjugacy,
    p: &TrigVectorField,
    grid: usize,
    t_final: f64,
    theta0: &[f64],
    generator_norm_sum: f64,
) -> Result<Verification, VerifyError> {
    let defect = conjugacy_defect(c, p, grid)?;
    let orbit = orbit_compare(c, p, theta0, t_final)?;
    let lipschitz = perturbed_field(c, p)?.evaluator().lipschitz_bound();
    Ok(Verification {
        defect_max: defect.defect_max,
        grid,
        orbit_dev: orbit.orbit_dev,
        t_final,
        phi_shift_norm: c.shift_norm_original(),
        phi_dist_bound: generator_norm_sum,
        phi_displacement_max: defect.displacement_max,
        gronwall: gronwall_check(orbit.orbit_dev, defect.defect_max, lipschitz, t_final),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::MultiIndex;
    use num_complex::Complex64;

    const PHI: f64 = 1.618_033_988_749_895;

    fn trivial(shift: &[f64], gens: Vec<TrigVectorField>) -> Conjugacy {
        let mut c = Conjugacy::identity(vec![1.0, PHI], Rescaling::identity(), 2.0, 1e-3);
        c.total_shift = shift.to_vec();
        c.generators = gens;
        c
    }

    #[test]
    fn evaluation_of_translations() {
        let c = trivial(&[0.0, 0.0], vec![]);
        assert_eq!(conjugacy_eval(&c, &[0.2, 0.3]).unwrap(), vec![0.2, 0.3]);
        let c = trivial(&[0.0, 0.0], vec![TrigVectorField::constant_real(&[0.1, -0.2])]);
        let y = conjugacy_eval(&c, &[0.2, 0.3]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-15 && (y[1] - 0.1).abs() < 1e-15);
        let c1 = TrigVectorField::constant_real(&[0.1, -0.2]);
        let c2 = TrigVectorField::constant_real(&[0.05, 0.5]);
        let ab = conjugacy_eval(&trivial(&[0.0, 0.0], vec![c1.clone(), c2.clone()]), &[0.0, 0.0]).unwrap();
        let ba = conjugacy_eval(&trivial(&[0.0, 0.0], vec![c2, c1]), &[0.0, 0.0]).unwrap();
        for (a, b) in ab.iter().zip(&ba) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((ab[0] - 0.15).abs() < 1e-15 && (ab[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn composition_order() {
        // Φ₀ a translation, Φ₁ a shear depending on θ₁: Φ₀(Φ₁(θ)) differs from Φ₁(Φ₀(θ))
        let shear = TrigVectorField::real_from_half(
            2,
            [(MultiIndex::new(vec![1, 0]), vec![Complex64::new(0.0, 0.0), Complex64::new(0.05, 0.0)])],
        )
        .unwrap();
        let trans = TrigVectorField::constant_real(&[0.7, 0.0]);
        let c = trivial(&[0.0, 0.0], vec![trans.clone(), shear.clone()]);
        let th = [0.3, 0.0];
        let got = conjugacy_eval(&c, &th).unwrap();
        let expect = flow_map_eval(&trans, &flow_map_eval(&shear, &th, 1.0).unwrap(), 1.0).unwrap();
        assert_eq!(got, expect);
        // the shear adds 0.1 cos θ₁ to θ₂
        assert!((got[1] - 0.1 * 0.3f64.cos()).abs() < 1e-11);
    }

    #[test]
    fn distance_is_periodic() {
        let tau = std::f64::consts::TAU;
        assert!(toroidal_distance(&[0.1, 0.0], &[tau - 0.1, 0.0]) - 0.2 < 1e-15);
        let a = [0.3, 1.0];
        let b = [0.5, 2.0];
        let d = toroidal_distance(&a, &b);
        assert!((toroidal_distance(&[a[0] + tau, a[1]], &b) - d).abs() < 1e-14);
        assert!((toroidal_distance(&a, &[b[0], b[1] - 3.0 * tau]) - d).abs() < 1e-14);
    }

    #[test]
    fn zero_and_constant_perturbations() {
        let c = trivial(&[0.0, 0.0], vec![]);
        let zero = TrigVectorField::zero(2, true);
        assert!(conjugacy_defect(&c, &zero, 16).unwrap().defect_max <= 1e-9);
        assert!(orbit_compare(&c, &zero, &[0.1, 0.2], 10.0).unwrap().orbit_dev <= 1e-10);

        // converged constant run: S = c and no generators
        let cst = [3e-7, -1e-7];
        let c = trivial(&cst, vec![]);
        let p = TrigVectorField::constant_real(&cst);
        assert!(conjugacy_defect(&c, &p, 16).unwrap().defect_max <= 1e-9);
        assert!(orbit_compare(&c, &p, &[0.1, 0.2], 10.0).unwrap().orbit_dev <= 1e-10);
    }

    #[test]
    fn exact_conjugacy_of_a_linearizable_field() {
        // P = [F, ω] for a single mode: then Φ = time-1 map of F conjugates
        // ω + P to ω up to O(|F|²).
        let omega = [1.0, PHI];
        let f = TrigVectorField::real_from_half(
            2,
            [(MultiIndex::new(vec![1, -1]), vec![Complex64::new(1e-6, 2e-6), Complex64::new(0.0, -1e-6)])],
        )
        .unwrap();
        let p = crate::calculus::lie_bracket(&f, &TrigVectorField::constant_real(&omega)).unwrap();
        let c = trivial(&[0.0, 0.0], vec![f]);
        let d = conjugacy_defect(&c, &p, 12).unwrap();
        assert!(d.defect_max < 1e-9, "{}", d.defect_max);
        assert!(d.displacement_max > 1e-6);
        // without the conjugacy the defect is the perturbation itself
        let none = conjugacy_defect(&trivial(&[0.0, 0.0], vec![]), &p, 12).unwrap();
        assert!(none.defect_max > 1e-6);
    }

    #[test]
    fn gronwall_inequality() {
        let g = gronwall_check(1e-9, 1e-10, 0.1, 10.0);
        assert!(g.holds && (g.rhs - 10.0 * (1e-10 + 1e-12) * 1f64.exp()).abs() < 1e-20);
        assert!(!gronwall_check(1.0, 1e-10, 0.1, 10.0).holds);
    }

    #[test]
    fn conjugacy_round_trips_through_json() {
        let c = trivial(&[1e-7, 2e-7], vec![TrigVectorField::constant_real(&[0.1, -0.2])]);
        let text = serde_json::to_string(&c).unwrap();
        let back: Conjugacy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
