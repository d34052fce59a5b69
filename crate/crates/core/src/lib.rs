//! Training procedures for autoregressive encoder-decoder policies: teacher
//! forcing, scheduled sampling, top-K feeding, REINFORCE and self-critic,
//! MIXER and mixed losses, value-network actor-critic, and Q-network critics
//! (DQN, double DQN, dueling heads) with experience replay.

pub mod ac;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pg;
pub mod policy;
pub mod qlearn;
pub mod schedules;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
