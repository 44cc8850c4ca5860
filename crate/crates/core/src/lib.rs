//! Verification of array programs parameterized by a symbolic size `N`.
//!
//! The verifier proves Hoare triples `{pre} P_N {post}` for all `N >= 1` by
//! induction on `N`, relating `P_N` to `P_{N-1}` through difference invariants.

pub mod ast;
pub mod diffinv;
pub mod engine;
pub mod frontend;
pub mod interp;
pub mod logic;
pub mod poly;
pub mod pretty;
pub mod ssa;
pub mod transform;

pub use ast::{BinOp, Bound, Expr, Fill, Formula, Loop, Name, Program, Rel, Stmt};
pub use frontend::{parse, parse_expr, parse_formula, Diagnostic, FrontendError, Spec};
