//! A parallel neurosymbolic engine.
//!
//! The crate couples a weighted first-order rule engine with soft-logic
//! semantics (grounding, constrained MAP inference, weight learning), a
//! small trainable neural predictor, and a gating network that fuses both
//! predictions into one conditional distribution.
//!
//! Numeric modules are generic over the scalar type via [`scalar::Real`];
//! `f64` aliases are exported at the crate root.

pub mod boolean_oracle;
pub mod concordia;
pub mod dist;
pub mod grounder;
pub mod harness;
pub mod hlmrf;
pub mod logic_lang;
pub mod neural;
pub mod scalar;

pub use scalar::Real;

/// Default-precision aliases.
pub type Theory = logic_lang::Theory<f64>;
pub type Rule = logic_lang::Rule<f64>;
pub type SumConstraint = logic_lang::SumConstraint<f64>;
