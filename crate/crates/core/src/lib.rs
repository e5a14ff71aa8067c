//! Risk-averse constrained reinforcement learning with optimistic exploration.
//!
//! The crate bundles everything needed to train and evaluate three off-policy
//! Lagrangian agents on small constrained MDPs:
//!
//! * [`risk`]: CVaR, its dual and spectral forms, and the quantile Huber loss.
//! * [`nets`]: dense networks with exact parameter and input gradients.
//! * [`heads`]: squashed Gaussian policy, twin reward critics, quantile cost ensemble.
//! * [`explore`]: the optimistic exploration policy built from critic confidence bounds.
//! * [`agent`]: gradient steps for SAC-Lagrangian, WCSAC and ORAC.
//! * [`env`]: the GuardedMaze grid and a one-step risky bandit.
//! * [`harness`]: replay, the training loop, evaluation, metrics, checkpoints.
//!
//! The math layers are generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the precision used by the harness.

pub mod agent;
pub mod config;
pub mod env;
pub mod explore;
pub mod harness;
pub mod heads;
pub mod nets;
pub mod risk;
mod scalar;

pub use scalar::Scalar;

/// Precision used by the training harness and CLI.
pub type Real = f64;

pub type ParamSet64 = nets::ParamSet<f64>;
pub type ParamSet32 = nets::ParamSet<f32>;
pub type QuantileVector64 = risk::QuantileVector<f64>;
pub type Agent64 = agent::Agent<f64>;
pub type Agent32 = agent::Agent<f32>;
