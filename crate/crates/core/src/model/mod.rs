//! From-scratch CNN encoder, projection and downstream heads with
//! reverse-mode gradients, Adam and binary checkpoints.

mod adam;
pub mod checkpoint;
mod layers;
mod network;
mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, L2Norm, Layer, Mode, Param, Relu, BN_EPS,
    BN_MOMENTUM,
};
pub use network::{
    head, projection, Encoder, EncoderConfig, Network, Task, FULL_FRAMES, HEAD_HIDDEN,
    LATENT_DIM, PROJECTION_HIDDEN,
};
pub use tensor::{Real, Tensor};

/// Order-sensitive hash of every parameter value of a network.
pub fn parameter_hash<T: Real>(net: &Network<T>) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for (name, p) in net.params() {
        name.hash(&mut h);
        for v in p.value.data() {
            v.to_f64().unwrap_or(f64::NAN).to_bits().hash(&mut h);
        }
    }
    h.finish()
}
