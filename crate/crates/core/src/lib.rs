//! Stage-by-stage certified Anosov-Katok conjugation scheme on the planar
//! annulus.
//!
//! The crate builds the conjugated circle-action homomorphisms
//! Φₙ(λ) = Hₙ S_{λαₙ₊₁} Hₙ⁻¹ out of exactly area-preserving closed-form
//! primitives, selects the constrained rotation numbers αₙ with exact
//! integer arithmetic, and certifies at every finite stage the
//! inequalities the limit argument consumes (conjugation identity, Cauchy
//! bounds, orbit density, C⁰ separation, subsequence convergence).

pub mod diffeo;
pub mod error;
pub mod geometry;
pub mod measure;
pub mod rational;
pub mod scheme;

pub use error::{CoreError, Result};
