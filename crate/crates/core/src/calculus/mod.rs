//! Lie brackets, Lie-series pullbacks and time-`t` flow maps of torus fields.
//!
//! Bracket convention: `[U, V] = DU·V − DV·U`. With it the pullback under the
//! flow `F_t` of `F` satisfies `d/dt F_t^* V = F_t^* [V, F]`, so that
//! `F_t^* V = Σ_m t^m/m! V_m` with `V_0 = V` and `V_m = [V_{m-1}, F]`.

pub mod ode;

use std::collections::BTreeMap;
use std::f64::consts::E;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::fourier::{Coeff, FieldError, MultiIndex, TrigVectorField};
use ode::{Dopri5, OdeError, OdeOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalculusError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("pullback budget violated: b = {b} > 1/2")]
    Budget { b: f64 },
    #[error("invalid widths: need 0 < sigma < r and lambda > 0 (r = {r}, sigma = {sigma}, lambda = {lambda})")]
    Widths { r: f64, sigma: f64, lambda: f64 },
    #[error("bracket widths need 0 < r < min(u, v): r = {r}, u = {u}, v = {v}")]
    BracketDomain { r: f64, u: f64, v: f64 },
    #[error("expected a constant field")]
    NotConstant,
    #[error("flow maps need a real field")]
    NotReal,
    #[error("flow integration failed: {0}")]
    Integration(#[from] OdeError),
}

/// Dense accumulation is used when the bounding box of the output modes has
/// at most this many cells.
const DENSE_CELLS: usize = 1 << 21;

struct Accumulator {
    n: usize,
    lo: Vec<i32>,
    extent: Vec<usize>,
    dense: Option<(Vec<Complex64>, Vec<bool>)>,
    sparse: BTreeMap<MultiIndex, Coeff>,
}

impl Accumulator {
    fn new(n: usize, lo: Vec<i32>, hi: Vec<i32>) -> Self {
        let extent: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1).max(0) as usize).collect();
        let cells = extent.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
        let dense = match cells {
            Some(c) if c <= DENSE_CELLS => Some((vec![Complex64::new(0.0, 0.0); c * n], vec![false; c])),
            _ => None,
        };
        Accumulator { n, lo, extent, dense, sparse: BTreeMap::new() }
    }

    fn add(&mut self, k: &[i32], l: &[i32], v: &[Complex64]) {
        match &mut self.dense {
            Some((data, touched)) => {
                let mut idx = 0usize;
                for j in 0..self.n {
                    idx = idx * self.extent[j] + (k[j] + l[j] - self.lo[j]) as usize;
                }
                touched[idx] = true;
                for (d, x) in data[idx * self.n..(idx + 1) * self.n].iter_mut().zip(v) {
                    *d += x;
                }
            }
            None => {
                let key = MultiIndex::new(k.iter().zip(l).map(|(a, b)| a + b).collect());
                let entry = self.sparse.entry(key).or_insert_with(|| vec![Complex64::new(0.0, 0.0); self.n]);
                for (d, x) in entry.iter_mut().zip(v) {
                    *d += x;
                }
            }
        }
    }

    fn finish(self) -> BTreeMap<MultiIndex, Coeff> {
        let Some((data, touched)) = self.dense else {
            return self.sparse;
        };
        let n = self.n;
        // row-major with the first coordinate slowest is lexicographic order
        let mut out = Vec::new();
        for (idx, _) in touched.iter().enumerate().filter(|(_, &t)| t) {
            let mut rem = idx;
            let mut key = vec![0i32; n];
            for j in (0..n).rev() {
                key[j] = (rem % self.extent[j]) as i32 + self.lo[j];
                rem /= self.extent[j];
            }
            out.push((MultiIndex::new(key), data[idx * n..(idx + 1) * n].to_vec()));
        }
        out.into_iter().collect()
    }
}

fn bounding_box(f: &TrigVectorField) -> (Vec<i32>, Vec<i32>) {
    let n = f.n();
    let mut lo = vec![i32::MAX; n];
    let mut hi = vec![i32::MIN; n];
    for (k, _) in f.modes() {
        for (j, &c) in k.components().iter().enumerate() {
            lo[j] = lo[j].min(c);
            hi[j] = hi[j].max(c);
        }
    }
    (lo, hi)
}

/// `[U, V] = DU·V − DV·U`, mode by mode:
/// the coefficient at `k + l` collects `i (u_k ⟨k, v_l⟩ − v_l ⟨l, u_k⟩)`.
pub fn lie_bracket(u: &TrigVectorField, v: &TrigVectorField) -> Result<TrigVectorField, CalculusError> {
    if u.n() != v.n() {
        return Err(FieldError::Dimension { expected: u.n(), got: v.n() }.into());
    }
    let n = u.n();
    let real = u.is_real() && v.is_real();
    if u.is_empty() || v.is_empty() {
        return Ok(TrigVectorField::zero(n, real));
    }
    let (ulo, uhi) = bounding_box(u);
    let (vlo, vhi) = bounding_box(v);
    let lo = ulo.iter().zip(&vlo).map(|(a, b)| a + b).collect();
    let hi = uhi.iter().zip(&vhi).map(|(a, b)| a + b).collect();
    let mut acc = Accumulator::new(n, lo, hi);

    let vs: Vec<(&MultiIndex, &Coeff)> = v.modes().collect();
    let mut term = vec![Complex64::new(0.0, 0.0); n];
    for (k, uk) in u.modes() {
        let kc = k.components();
        let k_zero = k.is_zero();
        for &(l, vl) in &vs {
            let lc = l.components();
            if k_zero && l.is_zero() {
                continue;
            }
            // ⟨k, v_l⟩ and ⟨l, u_k⟩
            let mut kv = Complex64::new(0.0, 0.0);
            let mut lu = Complex64::new(0.0, 0.0);
            for j in 0..n {
                kv += vl[j] * f64::from(kc[j]);
                lu += uk[j] * f64::from(lc[j]);
            }
            for j in 0..n {
                let d = uk[j] * kv - vl[j] * lu;
                term[j] = Complex64::new(-d.im, d.re);
            }
            acc.add(kc, lc, &term);
        }
    }
    Ok(TrigVectorField::from_map(n, real, acc.finish()))
}

/// `(1/e) (1/(u−r) + 1/(v−r)) ‖U‖_u ‖V‖_v`.
pub fn bracket_norm_bound(norm_u: f64, norm_v: f64, u: f64, v: f64, r: f64) -> Result<f64, CalculusError> {
    if !(r > 0.0 && r < u.min(v)) {
        return Err(CalculusError::BracketDomain { r, u, v });
    }
    if norm_u == 0.0 || norm_v == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 / (u - r) + 1.0 / (v - r)) / E * norm_u * norm_v)
}

/// Widths and truncation of a Lie-series pullback.
///
/// The series of `F_t^* V` is evaluated on the strip `r − σ` from data on `r`,
/// with `F` measured on the wider strip `r + λσ`. The quantity
/// `b = σ⁻¹ ‖F‖_{r+λσ}` must not exceed `1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PullbackBudget {
    pub r: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub b: f64,
    pub n_trunc: usize,
}

/// Hard cap on the number of Lie-series terms.
pub const MAX_TERMS: usize = 40;

impl PullbackBudget {
    pub fn new(generator: &TrigVectorField, r: f64, sigma: f64, lambda: f64) -> Result<Self, CalculusError> {
        if !(sigma > 0.0 && sigma < r && lambda > 0.0) {
            return Err(CalculusError::Widths { r, sigma, lambda });
        }
        let b = generator.weighted_norm(r + lambda * sigma) / sigma;
        if !(b <= 0.5) {
            return Err(CalculusError::Budget { b });
        }
        Ok(PullbackBudget { r, sigma, lambda, b, n_trunc: 0 })
    }

    pub fn with_truncation(mut self, n_trunc: usize) -> Self {
        self.n_trunc = n_trunc;
        self
    }

    /// `‖V‖_r e^{1/λ} Σ_{m>N} (bt)^m / e`, summed in closed form.
    pub fn tail_bound(&self, v_norm: f64, t: f64) -> f64 {
        let bt = self.b * t;
        if v_norm == 0.0 || bt == 0.0 {
            return 0.0;
        }
        v_norm * (1.0 / self.lambda).exp() * bt.powi(self.n_trunc as i32 + 1) / (E * (1.0 - bt))
    }

    /// Full transport estimate `(1 + bt) e^{1/λ} ‖V‖_r` for `‖F_t^* V‖_{r−σ}`.
    pub fn transport_bound(&self, v_norm: f64, t: f64) -> f64 {
        (1.0 + self.b * t) * (1.0 / self.lambda).exp() * v_norm
    }

    /// Tail of the time-integrated bracket series, where `a0` and `b0` are the
    /// norms on `r` of `[P̃, F]` and `[P°, F]`.
    pub fn integrated_tail_bound(&self, a0: f64, b0: f64) -> f64 {
        if (a0 == 0.0 && b0 == 0.0) || self.b == 0.0 {
            return 0.0;
        }
        let m = self.n_trunc as f64;
        let geometric = (1.0 / self.lambda).exp() * self.b.powi(self.n_trunc as i32 + 1) / (E * (1.0 - self.b));
        geometric * (a0 / (m + 3.0) + b0 / ((m + 2.0) * (m + 3.0)))
    }

    /// Smallest truncation order whose tail is at most `tol`, capped at
    /// [`MAX_TERMS`].
    pub fn truncation_for(&self, tol: f64, tail: impl Fn(&PullbackBudget) -> f64) -> usize {
        (0..MAX_TERMS)
            .find(|&n| tail(&self.with_truncation(n)) <= tol)
            .unwrap_or(MAX_TERMS)
    }
}

#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub field: TrigVectorField,
    /// Bound on the discarded tail in `‖·‖_{r−σ}`.
    pub tail_bound: f64,
    pub terms: usize,
}

/// `F_t^* V ≈ Σ_{m=0}^{N} t^m/m! V_m`.
pub fn lie_pullback(
    generator: &TrigVectorField,
    v: &TrigVectorField,
    t: f64,
    budget: &PullbackBudget,
) -> Result<SeriesResult, CalculusError> {
    if !(budget.b <= 0.5) {
        return Err(CalculusError::Budget { b: budget.b });
    }
    let mut sum = v.clone();
    let mut term = v.clone();
    let mut weight = 1.0;
    for m in 1..=budget.n_trunc {
        if term.is_zero() || generator.is_zero() {
            break;
        }
        term = lie_bracket(&term, generator)?;
        weight *= t / m as f64;
        sum = sum.add_scaled(&term, weight)?;
    }
    let tail_bound = budget.tail_bound(v.weighted_norm(budget.r), t);
    Ok(SeriesResult { field: sum, tail_bound, terms: budget.n_trunc + 1 })
}

/// `∫₀¹ F_t^* [P_t, F] dt` with `P_t = t P̃ + (1−t) P°`, term by term:
/// `Σ_m (1/m!) (A_m/(m+2) + B_m/((m+1)(m+2)))`, where `A_m`, `B_m` are the
/// Lie iterates of `[P̃, F]` and `[P°, F]`.
pub fn integrated_pullback_bracket(
    p_tilde: &TrigVectorField,
    p_mean: &TrigVectorField,
    generator: &TrigVectorField,
    budget: &PullbackBudget,
) -> Result<SeriesResult, CalculusError> {
    if !p_mean.is_constant() {
        return Err(CalculusError::NotConstant);
    }
    if !(budget.b <= 0.5) {
        return Err(CalculusError::Budget { b: budget.b });
    }
    let mut a = lie_bracket(p_tilde, generator)?;
    let mut b = lie_bracket(p_mean, generator)?;
    let (a0, b0) = (a.weighted_norm(budget.r), b.weighted_norm(budget.r));
    let mut sum = a.scaled(0.5).add_scaled(&b, 0.5)?;
    let mut inv_fact = 1.0;
    for m in 1..=budget.n_trunc {
        if a.is_zero() && b.is_zero() {
            break;
        }
        a = lie_bracket(&a, generator)?;
        b = lie_bracket(&b, generator)?;
        inv_fact /= m as f64;
        let mf = m as f64;
        sum = sum.add_scaled(&a, inv_fact / (mf + 2.0))?;
        sum = sum.add_scaled(&b, inv_fact / ((mf + 1.0) * (mf + 2.0)))?;
    }
    let tail_bound = budget.integrated_tail_bound(a0, b0);
    Ok(SeriesResult { field: sum, tail_bound, terms: budget.n_trunc + 1 })
}

/// Time-`t` map of `θ' = F(θ)` on the lifted torus `Rⁿ`.
///
/// The result is not reduced modulo `2π`; see [`wrap_angles`].
pub fn flow_map_eval(generator: &TrigVectorField, theta0: &[f64], t: f64) -> Result<Vec<f64>, CalculusError> {
    flow_map_with(generator, theta0, t, OdeOptions::default())
}

pub fn flow_map_with(
    generator: &TrigVectorField,
    theta0: &[f64],
    t: f64,
    opts: OdeOptions,
) -> Result<Vec<f64>, CalculusError> {
    if !generator.is_real() {
        return Err(CalculusError::NotReal);
    }
    if theta0.len() != generator.n() {
        return Err(FieldError::Dimension { expected: generator.n(), got: theta0.len() }.into());
    }
    let mut y = theta0.to_vec();
    if generator.is_zero() || t == 0.0 {
        return Ok(y);
    }
    let eval = generator.evaluator();
    let mut ode = Dopri5::new(|th: &[f64], out: &mut [f64]| eval.eval_into(th, out), y.len(), opts);
    ode.advance(&mut y, 0.0, t)?;
    Ok(y)
}

/// Reduces each angle into `[0, 2π)`.
pub fn wrap_angles(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|x| x.rem_euclid(std::f64::consts::TAU)).collect()
}
