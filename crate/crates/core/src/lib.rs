//! Load-following laboratory for a drum-controlled microreactor.
//!
//! * [`reactor`]: six-group point kinetics with lumped thermal and xenon
//!   feedback, advanced by an adaptive Dormand–Prince integrator.
//! * [`env`]: episodic control environment (observations, rewards,
//!   termination, measurement noise, per-drum views).
//! * [`pid`]: discrete PID benchmark and gain tuner.
//! * [`ppo`]: actor-critic PPO trained on vectorized environments.
//! * [`marl`]: shared-policy multi-agent harness over one reactor.
//! * [`eval`]: evaluation episodes, traces and noise sweeps.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which is what the environment and trainers use.

pub mod error;
pub mod eval;
pub mod env;
pub mod marl;
pub mod metrics;
pub mod pid;
pub mod ppo;
pub mod profile;
pub mod reactor;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Params = reactor::ReactorParams<f64>;
pub type State = reactor::ReactorState<f64>;
pub type Model = reactor::ReactorModel<f64>;
pub type Command = reactor::DrumCommand<f64>;
pub type Tolerance = reactor::Tolerance<f64>;
pub type Gains = pid::PidGains<f64>;

pub type Params32 = reactor::ReactorParams<f32>;
pub type State32 = reactor::ReactorState<f32>;
pub type Model32 = reactor::ReactorModel<f32>;
