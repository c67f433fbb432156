pub mod atlas;
pub mod consistency;
pub mod depth_dynamics;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod hemodynamics;
pub mod manifest;
pub mod pipeline;
pub mod registry;
pub mod synth;
pub mod tensor_store;

pub use error::{Error, Result};
