//! Intention-embedded communication for cooperative multi-agent reinforcement
//! learning: gridworld environments, per-agent variational belief modules,
//! a recurrent message/policy pipeline and the interleaved training schedule.

pub mod comm;
pub mod envs;
pub mod experiment;
pub mod ibm;
pub mod nn;
pub mod trainer;
pub mod trajectory;
