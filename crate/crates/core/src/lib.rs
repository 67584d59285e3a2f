//! Payload-aware trajectory optimization for a quadruped with two arms.

pub mod export;
pub mod gait;
pub mod kinematics;
pub mod pipeline;
pub mod program;
pub mod scenario;
pub mod solver;
pub mod splines;
pub mod srbd;
pub mod transcription;
pub mod verify;
