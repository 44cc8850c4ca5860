pub mod qe;
pub mod ranges;
pub mod simplify;
pub mod smt;
pub mod vc;
pub mod wp;

pub use qe::{eliminate, formula_diff, Equation};
pub use ranges::RangeCtx;
pub use simplify::{negate, simplify};
pub use smt::{emit_smtlib, Model, Sat, Solver, Validity};
pub use wp::{wp, WpError};
