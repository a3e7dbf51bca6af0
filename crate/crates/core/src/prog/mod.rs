//! The loop language: syntax tree, parser, printer and classification.

mod ast;
mod classify;
mod parse;
mod pretty;

pub use ast::{Assign, Expr, Func, Program};
pub use classify::{
    classify, detect_accumulators, nonlinear_cycle, Accumulator, Blocking, ClassificationReport,
    LoopClass, SiteKind, MAX_PCE_VARS,
};
pub(crate) use classify::{accumulators_of, current_value, site_kind};
pub use parse::{parse_expr, parse_program};
pub use pretty::pretty_print;
