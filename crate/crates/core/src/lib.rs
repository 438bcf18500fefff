//! Verification and synthesis of discrete-time control barrier functions.
//!
//! The crate is `no_std` (it needs `alloc`). Transcendental functions come
//! from `libm`.

#![cfg_attr(not(test), no_std)]
// negated comparisons are how NaN is routed to the failure branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod convex;
pub mod error;
pub mod expr;
mod fmath;
pub mod global_opt;
pub mod interval;
pub mod linalg;
pub mod problem;
pub mod synthesis;
pub mod underestimator;
pub mod verifier;

pub use error::{Error, ParseError, ParseErrorKind, Result};
pub use expr::{Env, Expr, Func, VarKind, VarRef};
pub use interval::{BoxN, Interval};
