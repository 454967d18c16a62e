//! Multi-modal 3D trajectory forecasting for general aviation aircraft in
//! non-towered terminal airspace.
//!
//! The crate is organized bottom-up: [`autograd`] supplies differentiable
//! tensors, [`geometry`] and [`kinematics`] the coordinate frames and the
//! flight-parameter rollout, [`dataset`] and [`synth`] the data, [`model`]
//! the network, and [`training`] and [`evaluation`] the experiment loop.

pub mod autograd;
pub mod dataset;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod kinematics;
pub mod model;
pub mod synth;
pub mod training;
