//! End-to-end orchestration: assets, encode, progressive decode, models,
//! the block-transform image path and decoder refit.

pub mod codec;
pub mod config;
pub mod image;
pub mod models;
pub mod synthetic;
pub mod training;
pub mod transform;

pub use codec::{decode_at, encode, Asset, Budget, Decoded, Encoded, Toggles};
pub use config::{CodecConfig, SourceMode};
pub use image::Image;
pub use models::Models;
pub use synthetic::{generate_image, generate_latents, SyntheticSpec};
