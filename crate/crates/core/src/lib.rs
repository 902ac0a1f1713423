//! Hybrid force–position action generation at desk scale: a differentiable
//! kernel, multimodal encoders, a Cross-Scale MoE, a flow-matching action
//! head, a contact simulator, controllability analysis and trajectory data.

pub mod config;
pub mod context;
pub mod control;
pub mod data;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod moe;
pub mod nn;
pub mod policy;
pub mod sim;
pub mod state;
pub mod train;
pub mod transition;
pub mod verify;

pub use error::{Error, Result};
