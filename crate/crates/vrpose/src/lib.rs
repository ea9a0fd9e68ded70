//! Statistical VR viewport-pose model, closed-form displacement moments,
//! analytical visibility similarity between frames, and the ViS-driven
//! background/foreground frame splitter, with built-in Monte-Carlo
//! verification oracles.

pub mod error;
pub mod mobility;
pub mod model;
pub mod moments;
pub mod opt;
pub mod oracle;
pub mod pose;
pub mod special;
pub mod splitter;
pub mod trace;
pub mod vis;

pub use error::{Error, Result};
