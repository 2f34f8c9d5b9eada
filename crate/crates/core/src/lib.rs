//! IRS-assisted uplink RSMA simulator for mobile edge computing, with a
//! hierarchical TD3 + DQN learner.

pub mod agents;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod env;
pub mod mec;
pub mod nn;
pub mod rsma;
pub mod stats;

pub use channel::{ChannelMask, ChannelState, IrsPhase};
pub use config::{AgentConfig, Combiner, ExperimentConfig, SystemConfig};
pub use env::{Env, SlotDecision, StateTensors};
pub use mec::{DelayReport, TaskBatch};
pub use rsma::{AccessScheme, Beamformer, DecodingOrder, RatePair, TxAllocation};
