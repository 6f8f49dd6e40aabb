//! Needle-state classification for hemodialysis cannulation video.
//!
//! Everything needed to train and run the light CNN and CRNN classifiers on
//! CPU: tensors and layers with hand-written backpropagation, Adam, the
//! dataset layout, a synthetic video generator, training loops, evaluation
//! metrics and a streaming inference engine.

pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod realtime;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Mixes a base seed with a stream of identifiers (splitmix64 finalizer), so
/// every clip, epoch and sample gets an independent reproducible seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
