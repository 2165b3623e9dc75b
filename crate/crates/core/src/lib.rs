//! Set-based actor-critic reinforcement learning with zonotopes.
//!
//! The crate is organized bottom-up:
//!
//! * [`zonotope`] and [`interval`]: exact set arithmetic.
//! * [`network`]: feed-forward networks with point and set forward/backward passes.
//! * [`losses`]: point and set-based critic losses and policy gradients.
//! * [`env`]: the control benchmarks.
//! * [`train`], [`replay`], [`optim`], [`attack`]: the training algorithms.
//! * [`verify`]: closed-loop reachability and certified lower-bound returns.

pub mod attack;
pub mod config;
pub mod env;
pub mod error;
pub mod interval;
pub mod losses;
pub mod network;
pub mod optim;
pub mod replay;
pub mod train;
pub mod verify;
pub mod zonotope;

pub use error::{Error, Result};
pub use interval::{Interval, IntervalBox};
pub use network::{Activation, BackwardMode, GradientZonotope, Gradients, Layer, Network};
pub use zonotope::Zonotope;
