//! Data path for a 12-taxel magnetic tactile glove: simulation of the
//! sensor array, the binary wire protocol, crosstalk metrics, hand-pose
//! post-processing, kinematic retargeting and dataset assembly.

pub mod sensor_sim;
pub mod wire;
pub mod analysis;
pub mod handpose;
pub mod retarget;
pub mod dataset;
pub mod pipeline;
