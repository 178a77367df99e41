//! Supervised-encoding quantizer: a label-supervised encoder whose embedding
//! space is clustered by k-means into labeled sub-classes, plus a decoder
//! that turns cluster means and convex combinations of features back into
//! images.

pub mod data;
pub mod generator;
pub mod nn;
pub mod pipeline;
pub mod quantizer;
pub mod rng;
pub mod tensor;

pub use tensor::{Tensor, TensorError};

/// Sizes the global worker pool used by k-means assignment and decoding.
/// Results do not depend on the thread count. Has no effect once the pool
/// has been used.
pub fn init_threads(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}
