//! `folin` decides whether a lower-order functional observer with linear
//! error dynamics exists for a user-supplied nonlinear system, builds the
//! observer, and verifies it algebraically and by co-simulation.
//!
//! The pipeline, module by module:
//!
//! * [`expr`] — the expression language systems are written in;
//! * [`jet`] — truncated Taylor arithmetic and Lie derivatives along the
//!   flow;
//! * [`span`] — the sampled least-squares feasibility test identifying
//!   the coefficient rows β (and optionally the error polynomial α);
//! * [`synth`] — companion-form observer assembly and algebraic
//!   verification of the defining identities;
//! * [`lti`] — the exact path for linear plants, including the classical
//!   order `v_o − 1` design;
//! * [`gfol`] — the generalized problem with nonlinear output injection
//!   and an invertible output relation;
//! * [`sim`] — fixed-step co-simulation with a co-integrated linear error
//!   reference;
//! * [`cli`] — file formats and the command front end.

pub mod cli;
pub mod expr;
pub mod gfol;
pub mod jet;
pub mod lti;
pub mod scalar;
pub mod sim;
pub mod span;
pub mod synth;
