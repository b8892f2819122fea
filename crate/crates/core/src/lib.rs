//! Neural point rendering with K-deep z-buffers.
//!
//! The pipeline rasterizes a point cloud into K-deep depth lists
//! ([`kraster`]), reconstructs and prunes queried points ([`querygen`]),
//! encodes them with learned radiance fields ([`radiance`]), fuses the K
//! feature maps ([`kfn`]) and decodes an image with a gated U-Net
//! ([`decoder`]). [`trainer`] ties the stages together.

pub mod autodiff;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod geom;
pub mod kfn;
pub mod kraster;
pub mod metrics;
pub mod par;
pub mod querygen;
pub mod radiance;
pub mod real;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
