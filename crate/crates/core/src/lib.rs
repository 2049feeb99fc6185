//! Boost converter control: a finite-control-set MPC expert, a small
//! feed-forward network trained to imitate it, and a PI/PWM baseline, all
//! driving the same fixed-step converter simulation.

pub mod ann;
pub mod cli;
pub mod error;
pub mod harness;
pub mod mpc;
pub mod pi;
pub mod plant;
pub mod train;

pub use error::{Error, Result};
