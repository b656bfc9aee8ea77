//! Simulated active-vision environments, foveated observations and small
//! on-policy learners.

pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod foveation;
pub mod gimbal;
pub mod kinematics;
pub mod learner;
pub mod metrics;
pub mod panorama;
pub mod rewards;

pub use error::{Error, Result};
