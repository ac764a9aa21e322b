//! Garment draping on posed bodies: dual-quaternion skinning, a two-stream
//! point/mesh network that refines the skinned garment, a physics-inspired
//! training loss, evaluation metrics, and a quasi-static cloth simulator used
//! to produce ground-truth drapes.

pub mod archive;
pub mod error;
pub mod loss;
pub mod mesh;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod metrics;
pub mod skinning;
pub mod tensor;

pub use error::{Error, Result};
