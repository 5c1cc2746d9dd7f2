//! Texture atlas reconstruction for UV-mapped triangle meshes from seven
//! viewpoint images.
//!
//! The crate covers everything except the image generator itself:
//! rasterization ([`raster`]), the max-z-normal meta-texture and view
//! weights ([`metatex`]), face/view and region masks ([`masks`]), grid and
//! latent operations ([`gridops`]), weighted inverse rendering
//! ([`projectback`]), generator clients ([`genclient`]) and the staged
//! pipeline ([`pipeline`]).

pub mod ctxb;
pub mod error;
pub mod genclient;
pub mod geometry;
pub mod gridops;
pub mod image;
pub mod masks;
pub mod metatex;
pub mod optim;
pub mod pipeline;
pub mod projectback;
pub mod raster;

pub use error::{Error, Result};
