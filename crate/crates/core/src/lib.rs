//! Non-intrusive global-local iterative coupling (GLIC) for quasi-static
//! nonlinear structural problems.
//!
//! A coarse global model is corrected by refined local patches through an
//! interface fixed-point iteration on a corrective load, accelerated by
//! Aitken relaxation, Anderson acceleration or a multi-secant Broyden
//! method.

pub mod accel;
pub mod coupling;
pub mod fem;
pub mod harness;
