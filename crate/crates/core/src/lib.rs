//! Desk-scale RL training stack for computer-use agents: a simulated hybrid
//! API-GUI desktop, environment cluster, replay engine, linear softmax policy,
//! step-level GRPO, behavior cloning and the Entropulse RL/SFT schedule.

pub mod apigen;
pub mod bc;
pub mod cluster;
pub mod entropulse;
pub mod envsim;
pub mod grpo;
pub mod policy;
pub mod replay;
pub mod rl;
pub mod rollout;
pub mod sft;
pub mod scalar;

pub use scalar::Scalar;

/// Double-precision policy, the default for training runs.
pub type Policy = policy::LinearPolicy<f64>;
