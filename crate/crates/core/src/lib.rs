//! Moment analysis for probabilistic loops with non-polynomial updates.

pub mod dist;
pub mod engine;
pub mod error;
pub mod exactmom;
pub mod lower;
pub mod pce;
pub mod poly;
pub mod prog;
pub mod quad;
pub mod sim;
pub mod transform;

pub use dist::Distribution;
pub use error::{Error, ParseError, Result};
pub use prog::{parse_program, pretty_print, Program};
