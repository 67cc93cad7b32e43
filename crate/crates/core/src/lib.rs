//! Caption-supervised weakly supervised object detection.
//!
//! Captions are parsed into textual scene graphs ([`textgraph`]); the object
//! classes and object/attribute pairs they mention supervise per-region score
//! heads ([`scorenet`]) through multiple-instance losses, the attribute
//! entanglement loss ([`weakloss`]) and online instance classifier refinement
//! ([`oicr`]). [`synthbench`] generates prototype-feature scenes so the whole
//! pipeline runs without images, and [`trainer`] trains and evaluates it.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod oicr;
pub mod scorenet;
pub mod synthbench;
pub mod textgraph;
pub mod trainer;
pub mod weakloss;

pub use error::{Error, Result};
