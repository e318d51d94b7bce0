//! Text-to-poster generation: background retrieval, smooth-region detection,
//! layout prediction and refinement, text stylization and rendering.

pub mod compose;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod layout;
pub mod raster;
pub mod render;
pub mod retrieval;
pub mod saliency;
pub mod smooth_region;
pub mod stylizer;

pub use error::{Error, Result};
