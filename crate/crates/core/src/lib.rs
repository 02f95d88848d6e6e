//! Quantification of background parenchymal enhancement (BPE) from breast
//! DCE-MRI.

pub mod bpe;
pub mod error;
pub mod fcm;
pub mod io;
pub mod patch;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{volume_of_mask, DceSeries, Geometry, Mask3D, Orientation, Volume3D};
