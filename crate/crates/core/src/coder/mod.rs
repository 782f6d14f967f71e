//! Ternary entropy coding and the bitstream container.

pub mod container;
pub mod rans;

pub use container::{ChunkEntry, Container, Header, ImageInfo};
pub use rans::{quantize_probs, FrequencyTriple};
