//! Nonlocal Stein-type transport equations, their local limits, the
//! interacting-particle system behind them, and diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod diagnostics;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod particles;
pub mod pde;
pub mod potentials;
pub mod quad;

pub use error::{Error, Result};
pub use grid::{convolve, convolve_onto, gradient, integrate, Convolver, Field, Grid, ReflectingConvolver};
