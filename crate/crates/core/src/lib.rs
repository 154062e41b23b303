//! Intrinsic measures on polynomial sub-Riemannian structures.

pub mod error;
pub mod expr;
pub mod field;
pub mod flag;
pub mod linalg;
pub mod par;
pub mod parse;
pub mod rng;
pub mod structure;
pub mod system;

pub use error::{Error, Result};
pub use expr::{Expr, Rat};
pub use field::{lie_bracket, VectorField};
pub use structure::{parse_structure, SRStructure};
pub mod blowup;
pub mod distance;
pub mod frames;
pub mod mc;
pub mod measures;
pub mod nilpotent;
pub mod popp;
