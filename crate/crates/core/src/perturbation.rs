//! Seeded random real perturbations.
//!
//! Modes are drawn uniformly without replacement among the canonical
//! representatives of `0 < |k| <= max_k`, coefficients are complex Gaussian per
//! component, the reality pairing `p_{-k} = conj(p_k)` is enforced, and the
//! result is rescaled so that `‖P‖_s = ε` to within rounding, never above `ε`.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{for_each_canonical_in_shell, MultiIndex, TrigVectorField};

/// Name of the generator, echoed in reports.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha 0.9), seed_from_u64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub modes: usize,
    pub max_k: u32,
    pub eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub with_mean: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("only {available} canonical modes with 0 < |k| <= {max_k}, {requested} requested")]
    TooManyModes { requested: usize, available: usize, max_k: u32 },
    #[error("need eps >= 0 and s >= 0, got eps = {eps}, s = {s}")]
    Scale { eps: f64, s: f64 },
}

pub fn random_real_field(n: usize, spec: &RandomSpec, s: f64) -> Result<TrigVectorField, PerturbationError> {
    if !(spec.eps >= 0.0 && s >= 0.0) {
        return Err(PerturbationError::Scale { eps: spec.eps, s });
    }
    let mut pool = Vec::new();
    for m in 1..=spec.max_k {
        for_each_canonical_in_shell(n, m, |k| pool.push(k.clone()));
    }
    if spec.modes > pool.len() {
        return Err(PerturbationError::TooManyModes { requested: spec.modes, available: pool.len(), max_k: spec.max_k });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut picked: Vec<usize> = sample(&mut rng, pool.len(), spec.modes).into_vec();
    picked.sort_unstable();
    let mut half = Vec::with_capacity(spec.modes + 1);
    for i in picked {
        let v = (0..n)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        half.push((pool[i].clone(), v));
    }
    if spec.with_mean {
        let v = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
        half.push((MultiIndex::zero(n), v));
    }
    let field = TrigVectorField::real_from_half(n, half).expect("canonical modes with real mean");
    let norm = field.weighted_norm(s);
    if norm == 0.0 {
        return Ok(field);
    }
    // round towards the budget so that `‖P‖_s <= ε` holds in floating point
    let mut scale = spec.eps / norm;
    let mut out = field.scaled(scale);
    while out.weighted_norm(s) > spec.eps {
        scale *= 1.0 - f64::EPSILON;
        out = field.scaled(scale);
    }
    Ok(out)
}
