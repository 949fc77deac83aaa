//! Self-paced curriculum learning for cooperative multi-agent reinforcement
//! learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`context`]: context spaces, Gaussian curriculum distributions, realization
//!   of samples into buildable tasks.
//! - [`curriculum`]: the self-paced distribution update and baseline schedules.
//! - [`nn`]: a small perceptron with hand-written backpropagation and Adam.
//! - [`env`]: the pursuit-evasion grid world and the particle spread/push tasks.
//! - [`ppo`]: independent PPO with a single parameter set shared by all agents.
//! - [`harness`]: experiment configuration, the outer training loop, and CSV
//!   records.

pub mod context;
pub mod curriculum;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ppo;

pub use error::{Error, Result};
