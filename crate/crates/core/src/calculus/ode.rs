//! Dormand–Prince 5(4) with a standard PI-free step controller.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-12, atol: 1e-12, max_steps: 1_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b*, the embedded 4th-order difference
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive integrator for the autonomous system `y' = f(y)`.
pub struct Dopri5<F> {
    rhs: F,
    opts: OdeOptions,
    h: Option<f64>,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    steps: usize,
}

impl<F: FnMut(&[f64], &mut [f64])> Dopri5<F> {
    pub fn new(rhs: F, dim: usize, opts: OdeOptions) -> Self {
        Dopri5 {
            rhs,
            opts,
            h: None,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            steps: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Advances `y` from `t0` to `t1` (either direction).
    pub fn advance(&mut self, y: &mut [f64], t0: f64, t1: f64) -> Result<(), OdeError> {
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        let mut t = t0;
        let mut h = self.h.map_or(span.abs(), |h| h.min(span.abs())) * dir;
        let dim = y.len();
        (self.rhs)(y, &mut self.k[0]);
        let mut y_new = vec![0.0; dim];
        loop {
            let remaining = t1 - t;
            if remaining * dir <= 0.0 {
                break;
            }
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            if self.steps >= self.opts.max_steps {
                return Err(OdeError::TooManySteps(self.opts.max_steps));
            }
            self.steps += 1;
            let err = self.attempt(y, h, &mut y_new);
            if !err.is_finite() {
                if h.abs() < 1e-14 * t.abs().max(1.0) {
                    return Err(OdeError::NonFinite(t));
                }
                h *= 0.1;
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                y.copy_from_slice(&y_new);
                // FSAL: stage 7 is f(y_new)
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                if !last {
                    self.h = Some(h.abs() * factor);
                }
                h *= factor;
            } else {
                h *= factor.min(1.0);
                if h.abs() < 1e-14 * t.abs().max(1.0) {
                    return Err(OdeError::StepUnderflow { t, h });
                }
            }
        }
        Ok(())
    }

    /// One trial step of size `h`; returns the scaled error norm.
    fn attempt(&mut self, y: &[f64], h: f64, y_new: &mut [f64]) -> f64 {
        let dim = y.len();
        let stages: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (_c, coeffs)) in stages.iter().enumerate() {
            for (i, (t, yi)) in self.tmp.iter_mut().zip(y.iter()).enumerate() {
                let acc: f64 = coeffs.iter().enumerate().map(|(j, a)| a * self.k[j][i]).sum();
                *t = yi + h * acc;
            }
            let (_, rest) = self.k.split_at_mut(s + 1);
            (self.rhs)(&self.tmp, &mut rest[0]);
        }
        for i in 0..dim {
            y_new[i] = y[i]
                + h * (B1 * self.k[0][i] + B3 * self.k[2][i] + B4 * self.k[3][i] + B5 * self.k[4][i] + B6 * self.k[5][i]);
        }
        {
            let (_, rest) = self.k.split_at_mut(6);
            (self.rhs)(y_new, &mut rest[0]);
        }
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let e = h
                * (E1 * self.k[0][i] + E3 * self.k[2][i] + E4 * self.k[3][i] + E5 * self.k[4][i] + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let scale = self.opts.atol + self.opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / scale).abs());
        }
        err
    }
}
