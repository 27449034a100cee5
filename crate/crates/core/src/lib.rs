//! Spectral KAM iteration for constant vector fields on the torus.
//!
//! The crate follows one Newton-free scheme end to end: a perturbed rotation
//! `ω + P` on `Tⁿ` is carried, step by step, into a constant field by time-1
//! maps of trigonometric generators, with every step checked against its own
//! contraction certificate.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod calculus;
pub mod config;
pub mod fourier;
pub mod kamstep;
pub mod perturbation;
pub mod pipeline;
pub mod schedule;
pub mod verify;
