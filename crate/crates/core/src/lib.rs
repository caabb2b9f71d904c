//! Object-level self-correction for multi-object images: decompose the
//! description into checkable constraints, fix counts, correct attributes and
//! positions in agent loops, then stitch and refine under a region mask.

pub mod backend;
pub mod config;
pub mod counting;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod ocs;
pub mod orchestrator;
pub mod pdss;
pub mod prompts;
pub mod runlog;
pub mod scene;
pub mod sprite;

pub use error::{Error, Result};
