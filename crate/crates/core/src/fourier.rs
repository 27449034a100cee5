//! Trigonometric-polynomial vector fields on the torus `Tⁿ = Rⁿ / 2πZⁿ`.
//!
//! A field `P = Σ_k p_k e^{i⟨k,θ⟩}` is stored as a sparse, lexicographically
//! ordered map from integer modes to complex coefficient vectors. Sizes are
//! measured in the weighted norm `‖P‖_s = Σ_k |p_k| e^{|k|s}`, with `|p_k|` the
//! max-norm of the coefficient and `|k|` the sum-norm of the mode.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("reality condition violated at mode {0}")]
    Reality(MultiIndex),
    #[error("split weights need a = 1 - exp(-tau*sigma): a = {a}, tau = {tau}, sigma = {sigma}")]
    SplitCoupling { a: f64, tau: f64, sigma: f64 },
    #[error("malformed field document: {0}")]
    Document(String),
}

/// An integer mode `k ∈ Zⁿ`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<i32>);

impl MultiIndex {
    pub fn new(k: Vec<i32>) -> Self {
        MultiIndex(k)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// Unit vector `e_j`.
    pub fn unit(n: usize, j: usize) -> Self {
        let mut k = vec![0; n];
        k[j] = 1;
        MultiIndex(k)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[i32] {
        &self.0
    }

    /// Sum-norm `|k| = Σ |k_i|`. Every `|k|` in the crate goes through here.
    pub fn norm(&self) -> u32 {
        sum_norm(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn neg(&self) -> Self {
        MultiIndex(self.0.iter().map(|&c| -c).collect())
    }

    pub fn add(&self, other: &MultiIndex) -> Self {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// The representative of `±k` whose first non-zero entry is positive.
    pub fn is_canonical(&self) -> bool {
        self.0.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

pub fn sum_norm(k: &[i32]) -> u32 {
    k.iter().map(|c| c.unsigned_abs()).sum()
}

/// Calls `f` once for each pair `±k` with `|k| = m`, passing the canonical one.
pub fn for_each_canonical_in_shell(n: usize, m: u32, mut f: impl FnMut(&MultiIndex)) {
    fn rec(pos: usize, rem: i32, signed: bool, buf: &mut MultiIndex, f: &mut dyn FnMut(&MultiIndex)) {
        let n = buf.0.len();
        if pos + 1 == n {
            if rem == 0 {
                if signed {
                    buf.0[pos] = 0;
                    f(buf);
                }
            } else {
                buf.0[pos] = rem;
                f(buf);
                if signed {
                    buf.0[pos] = -rem;
                    f(buf);
                }
            }
            return;
        }
        for v in 0..=rem {
            buf.0[pos] = v;
            rec(pos + 1, rem - v, signed || v != 0, buf, f);
            if v != 0 && signed {
                buf.0[pos] = -v;
                rec(pos + 1, rem - v, true, buf, f);
            }
        }
    }
    if n == 0 || m == 0 {
        return;
    }
    let mut buf = MultiIndex::zero(n);
    rec(0, m as i32, false, &mut buf, &mut f);
}

/// How the coefficients depend on the frequency parameter. Only constant
/// coefficients are implemented; the tag keeps room for affine models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoefficientModel {
    #[default]
    Constant,
}

pub type Coeff = Vec<Complex64>;

/// A finite Fourier sum of `n`-vectors on `Tⁿ`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldDocument", into = "FieldDocument")]
pub struct TrigVectorField {
    n: usize,
    real: bool,
    model: CoefficientModel,
    modes: BTreeMap<MultiIndex, Coeff>,
}

impl fmt::Debug for TrigVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrigVectorField")
            .field("n", &self.n)
            .field("real", &self.real)
            .field("modes", &self.modes.len())
            .field("support_radius", &self.support_radius())
            .finish()
    }
}

fn coeff_max_norm(c: &[Complex64]) -> f64 {
    c.iter().fold(0.0, |m, z| m.max(z.norm()))
}

fn is_zero_coeff(c: &[Complex64]) -> bool {
    c.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

impl TrigVectorField {
    pub fn zero(n: usize, real: bool) -> Self {
        TrigVectorField { n, real, model: CoefficientModel::Constant, modes: BTreeMap::new() }
    }

    /// The constant field `v`; real iff every entry of `v` is real.
    pub fn constant(v: &[Complex64]) -> Self {
        let real = v.iter().all(|z| z.im == 0.0);
        let mut f = Self::zero(v.len(), real);
        f.insert_raw(MultiIndex::zero(v.len()), v.to_vec());
        f
    }

    pub fn constant_real(v: &[f64]) -> Self {
        let c: Coeff = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::constant(&c)
    }

    /// `v e^{i⟨k,θ⟩}`; complex in general.
    pub fn single_mode(k: MultiIndex, v: Coeff) -> Result<Self, FieldError> {
        Self::from_modes(k.dim(), false, [(k, v)])
    }

    /// Builds a field from explicit modes. Repeated modes are summed. When
    /// `real` is set, every mode must come with its conjugate partner.
    pub fn from_modes(
        n: usize,
        real: bool,
        modes: impl IntoIterator<Item = (MultiIndex, Coeff)>,
    ) -> Result<Self, FieldError> {
        let mut f = Self::zero(n, false);
        for (k, v) in modes {
            if k.dim() != n {
                return Err(FieldError::Dimension { expected: n, got: k.dim() });
            }
            if v.len() != n {
                return Err(FieldError::Dimension { expected: n, got: v.len() });
            }
            f.accumulate(k, &v, Complex64::new(1.0, 0.0));
        }
        f.drop_zeros();
        if real {
            f.check_reality(1e-13)?;
            f.real = true;
            f.enforce_reality();
        }
        Ok(f)
    }

    /// Real field from modes given on one side of each `±k` pair; the partner
    /// `p_{-k} = conj(p_k)` is filled in. The `k = 0` coefficient keeps its real part.
    pub fn real_from_half(n: usize, modes: impl IntoIterator<Item = (MultiIndex, Coeff)>) -> Result<Self, FieldError> {
        let mut f = Self::zero(n, true);
        for (k, v) in modes {
            if k.dim() != n || v.len() != n {
                return Err(FieldError::Dimension { expected: n, got: k.dim().min(v.len()) });
            }
            if k.is_zero() {
                let re: Coeff = v.iter().map(|z| Complex64::new(z.re, 0.0)).collect();
                f.accumulate(k, &re, Complex64::new(1.0, 0.0));
            } else {
                let conj: Coeff = v.iter().map(|z| z.conj()).collect();
                f.accumulate(k.neg(), &conj, Complex64::new(1.0, 0.0));
                f.accumulate(k, &v, Complex64::new(1.0, 0.0));
            }
        }
        f.drop_zeros();
        f.enforce_reality();
        Ok(f)
    }

    pub(crate) fn insert_raw(&mut self, k: MultiIndex, v: Coeff) {
        if !is_zero_coeff(&v) {
            self.modes.insert(k, v);
        }
    }

    /// `self += c · v e_k` without normalizing.
    pub(crate) fn accumulate(&mut self, k: MultiIndex, v: &[Complex64], c: Complex64) {
        let entry = self.modes.entry(k).or_insert_with(|| vec![Complex64::new(0.0, 0.0); v.len()]);
        for (e, x) in entry.iter_mut().zip(v) {
            *e += c * x;
        }
    }

    pub(crate) fn drop_zeros(&mut self) {
        self.modes.retain(|_, v| !is_zero_coeff(v));
    }

    pub(crate) fn from_map(n: usize, real: bool, modes: BTreeMap<MultiIndex, Coeff>) -> Self {
        let mut f = TrigVectorField { n, real, model: CoefficientModel::Constant, modes };
        f.drop_zeros();
        if real {
            f.enforce_reality();
        }
        f
    }

    fn check_reality(&self, rel_tol: f64) -> Result<(), FieldError> {
        for (k, v) in &self.modes {
            let partner = self.modes.get(&k.neg());
            let ok = match partner {
                Some(w) => v.iter().zip(w).all(|(a, b)| (a - b.conj()).norm() <= rel_tol * a.norm().max(b.norm())),
                None => false,
            };
            if !ok {
                return Err(FieldError::Reality(k.clone()));
            }
        }
        Ok(())
    }

    /// Makes the conjugate pairing exact: `p_{-k} := conj(p_k)` for canonical
    /// `k`, and the mean is made real.
    pub(crate) fn enforce_reality(&mut self) {
        if !self.real {
            return;
        }
        let zero = MultiIndex::zero(self.n);
        if let Some(v) = self.modes.get_mut(&zero) {
            for z in v.iter_mut() {
                z.im = 0.0;
            }
        }
        let canon: Vec<(MultiIndex, Coeff)> = self
            .modes
            .iter()
            .filter(|(k, _)| k.is_canonical())
            .map(|(k, v)| (k.neg(), v.iter().map(|z| z.conj()).collect()))
            .collect();
        // partners of canonical modes that are missing from the map
        let orphans: Vec<(MultiIndex, Coeff)> = self
            .modes
            .iter()
            .filter(|(k, _)| !k.is_zero() && !k.is_canonical() && !self.modes.contains_key(&k.neg()))
            .map(|(k, v)| (k.neg(), v.iter().map(|z| z.conj()).collect()))
            .collect();
        for (k, v) in canon.into_iter().chain(orphans) {
            self.modes.insert(k, v);
        }
        self.drop_zeros();
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn model(&self) -> CoefficientModel {
        self.model
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Only the `k = 0` coefficient is present.
    pub fn is_constant(&self) -> bool {
        self.modes.keys().all(MultiIndex::is_zero)
    }

    pub fn modes(&self) -> impl Iterator<Item = (&MultiIndex, &Coeff)> {
        self.modes.iter()
    }

    pub fn coeff(&self, k: &MultiIndex) -> Option<&Coeff> {
        self.modes.get(k)
    }

    /// Largest `|k|` among stored modes, 0 for the zero field.
    pub fn support_radius(&self) -> u32 {
        self.modes.keys().map(MultiIndex::norm).max().unwrap_or(0)
    }

    /// `‖P‖_s = Σ_k |p_k| e^{|k|s}`. Overflow yields `+∞`.
    pub fn weighted_norm(&self, s: f64) -> f64 {
        self.modes.iter().map(|(k, v)| coeff_max_norm(v) * (f64::from(k.norm()) * s).exp()).fold(0.0, |acc, x| acc + x)
    }

    /// The mean value `p₀`, zero if absent.
    pub fn mean_value(&self) -> Coeff {
        self.modes.get(&MultiIndex::zero(self.n)).cloned().unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); self.n])
    }

    /// The field with its `k = 0` coefficient removed.
    pub fn without_mean(&self) -> Self {
        let mut f = self.clone();
        f.modes.remove(&MultiIndex::zero(self.n));
        f
    }

    /// The mean value as a constant field.
    pub fn mean_field(&self) -> Self {
        let mut f = Self::zero(self.n, self.real);
        if let Some(v) = self.modes.get(&MultiIndex::zero(self.n)) {
            f.insert_raw(MultiIndex::zero(self.n), v.clone());
        }
        f
    }

    fn check_dim(&self, other: &Self) -> Result<(), FieldError> {
        if self.n == other.n {
            Ok(())
        } else {
            Err(FieldError::Dimension { expected: self.n, got: other.n })
        }
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self, FieldError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        let c = Complex64::new(c, 0.0);
        for (k, v) in &other.modes {
            out.accumulate(k.clone(), v, c);
        }
        out.real = self.real && other.real;
        out.drop_zeros();
        out.enforce_reality();
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, FieldError> {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.modes.values_mut() {
            for z in v.iter_mut() {
                *z *= c;
            }
        }
        out.drop_zeros();
        out
    }

    /// Complex scalar multiple; the result is not flagged real.
    pub fn scaled_complex(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.real = false;
        for v in out.modes.values_mut() {
            for z in v.iter_mut() {
                *z *= c;
            }
        }
        out.drop_zeros();
        out
    }

    /// Removes modes whose weighted contribution `|p_k| e^{|k|s}` is below
    /// `threshold`, and all modes with `|k| > k_max` when a cap is given.
    /// Returns the weighted norm at width `s` of everything removed.
    pub fn prune(&mut self, s: f64, threshold: f64, k_max: Option<u32>) -> f64 {
        let mut removed = 0.0;
        self.modes.retain(|k, v| {
            let weight = coeff_max_norm(v) * (f64::from(k.norm()) * s).exp();
            let keep = weight >= threshold && k_max.is_none_or(|cap| k.norm() <= cap);
            if !keep {
                removed += weight;
            }
            keep
        });
        removed
    }

    /// `Σ_k p_k e^{i⟨k,θ⟩}` by direct summation, for complex `θ`.
    pub fn eval(&self, theta: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for (k, v) in &self.modes {
            let phase: Complex64 = k.components().iter().zip(theta).map(|(&ki, &t)| f64::from(ki) * t).sum();
            let e = (Complex64::i() * phase).exp();
            for (o, c) in out.iter_mut().zip(v) {
                *o += c * e;
            }
        }
        out
    }

    /// Evaluation at real angles.
    pub fn eval_real_angles(&self, theta: &[f64]) -> Vec<Complex64> {
        let t: Vec<Complex64> = theta.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.eval(&t)
    }

    /// Flat, precomputed form for repeated real evaluation.
    pub fn evaluator(&self) -> FieldEvaluator {
        FieldEvaluator::new(self)
    }

    /// Splits `P = P̃ + P̂` into the infrared part
    /// `p̃_k = (1 - (1-a) e^{|k|σ}) p_k` on `|k| < τ` and the ultraviolet rest.
    pub fn split_ir_uv(&self, tau: f64, sigma: f64, a: f64) -> Result<(Self, Self), FieldError> {
        let coupled = -(-tau * sigma).exp_m1();
        if !(a > 0.0 && a < 1.0 && sigma > 0.0 && tau >= 1.0) || (a - coupled).abs() > 1e-12 * coupled {
            return Err(FieldError::SplitCoupling { a, tau, sigma });
        }
        let log_keep = (1.0 - a).ln();
        let mut ir = Self::zero(self.n, self.real);
        let mut uv = Self::zero(self.n, self.real);
        for (k, v) in &self.modes {
            let norm = f64::from(k.norm());
            if norm < tau {
                let w = -(log_keep + norm * sigma).exp_m1();
                let tilde: Coeff = v.iter().map(|z| z * w).collect();
                let hat: Coeff = v.iter().zip(&tilde).map(|(z, t)| z - t).collect();
                ir.insert_raw(k.clone(), tilde);
                uv.insert_raw(k.clone(), hat);
            } else {
                uv.insert_raw(k.clone(), v.clone());
            }
        }
        Ok((ir, uv))
    }
}

/// `g(t) = (1 - (1-a) e^{tσ}) e^{tσ̃}` with `σ̃ = σ(1-a)/a`: the factor by which
/// an infrared coefficient of order `t` is bounded on the widened strip.
pub fn larger_domain_envelope(t: f64, sigma: f64, a: f64) -> f64 {
    let sigma_tilde = sigma * (1.0 - a) / a;
    -((1.0 - a).ln() + t * sigma).exp_m1() * (t * sigma_tilde).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LargerDomainCheck {
    /// `‖P̃‖_{s+σ̃}`.
    pub measured: f64,
    /// `a ε`.
    pub budget: f64,
    pub sigma_tilde: f64,
}

impl LargerDomainCheck {
    pub fn holds(&self) -> bool {
        self.measured <= self.budget
    }
}

/// Measures the infrared part on the widened strip `s + σ̃` against `a ε`.
pub fn check_larger_domain_bound(p_tilde: &TrigVectorField, s: f64, sigma: f64, a: f64, eps: f64) -> LargerDomainCheck {
    let sigma_tilde = sigma * (1.0 - a) / a;
    LargerDomainCheck { measured: p_tilde.weighted_norm(s + sigma_tilde), budget: a * eps, sigma_tilde }
}

/// Flattened modes for fast evaluation at real angles.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    n: usize,
    radius: i32,
    keys: Vec<i32>,
    coeffs: Vec<Complex64>,
    real: bool,
}

impl FieldEvaluator {
    fn new(field: &TrigVectorField) -> Self {
        let n = field.n;
        // for real fields one of each ± pair suffices: 2 Re(p_k e_k), plus p_0
        let mut keys = Vec::new();
        let mut coeffs = Vec::new();
        for (k, v) in &field.modes {
            if field.real && !k.is_zero() && !k.is_canonical() {
                continue;
            }
            let factor = if field.real && !k.is_zero() { 2.0 } else { 1.0 };
            keys.extend_from_slice(k.components());
            coeffs.extend(v.iter().map(|z| z * factor));
        }
        let radius = field.modes.keys().flat_map(|k| k.components().iter().map(|c| c.abs())).max().unwrap_or(0);
        FieldEvaluator { n, radius, keys, coeffs, real: field.real }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Real part of the field at real angles, written into `out`.
    pub fn eval_into(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.n;
        let r = self.radius as usize;
        let width = 2 * r + 1;
        // powers[j][r + m] = e^{i m θ_j}
        let mut powers = vec![Complex64::new(1.0, 0.0); n * width];
        for (j, &t) in theta.iter().enumerate().take(n) {
            let base = Complex64::new(t.cos(), t.sin());
            let row = &mut powers[j * width..(j + 1) * width];
            for m in 1..=r {
                row[r + m] = row[r + m - 1] * base;
                row[r - m] = row[r + m].conj();
            }
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for (key, c) in self.keys.chunks_exact(n).zip(self.coeffs.chunks_exact(n)) {
            let mut e = Complex64::new(1.0, 0.0);
            for (j, &kj) in key.iter().enumerate() {
                if kj != 0 {
                    e *= powers[j * width + (r as i32 + kj) as usize];
                }
            }
            for (a, z) in acc.iter_mut().zip(c) {
                *a += z * e;
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = a.re;
        }
        debug_assert!(self.real || n > 0);
    }

    /// `Σ |k| |p_k|`: a Lipschitz constant of the field on the real torus.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut total = 0.0;
        for (key, c) in self.keys.chunks_exact(self.n).zip(self.coeffs.chunks_exact(self.n)) {
            total += f64::from(sum_norm(key)) * coeff_max_norm(c);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDocument {
    pub k: Vec<i32>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// JSON layout `{ "n", "real", "modes": [ { "k", "re", "im" } ] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDocument {
    pub n: usize,
    pub real: bool,
    pub modes: Vec<ModeDocument>,
}

impl From<TrigVectorField> for FieldDocument {
    fn from(f: TrigVectorField) -> Self {
        let modes = f
            .modes
            .iter()
            .map(|(k, v)| ModeDocument {
                k: k.components().to_vec(),
                re: v.iter().map(|z| z.re).collect(),
                im: v.iter().map(|z| z.im).collect(),
            })
            .collect();
        FieldDocument { n: f.n, real: f.real, modes }
    }
}

impl TryFrom<FieldDocument> for TrigVectorField {
    type Error = FieldError;

    fn try_from(doc: FieldDocument) -> Result<Self, Self::Error> {
        let mut modes = Vec::with_capacity(doc.modes.len());
        for m in doc.modes {
            if m.re.len() != m.im.len() {
                return Err(FieldError::Document(format!("mode {:?}: re and im lengths differ", m.k)));
            }
            let v: Coeff = m.re.iter().zip(&m.im).map(|(&r, &i)| Complex64::new(r, i)).collect();
            modes.push((MultiIndex::new(m.k), v));
        }
        TrigVectorField::from_modes(doc.n, doc.real, modes)
    }
}
