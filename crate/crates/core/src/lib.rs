//! Verifier-guided trajectory search: sample candidate object motions, render them as
//! composited sketches, score them, and export the best plan as a dense point track.

pub mod error;
pub mod export;
pub mod harness;
pub mod planner;
pub mod prompts;
pub mod raster;
pub mod render;
pub mod scene;
pub mod search;
pub mod sweep;
pub mod synthetic;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
