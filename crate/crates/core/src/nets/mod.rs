//! Layers with explicit backward passes, the toy generator and the two
//! discriminators.

pub mod checkpoint;
mod discriminator;
mod generator;
mod init;
pub mod layers;

pub use checkpoint::{Checkpoint, Checkpointable, NetworkKind, NetworkRecord, OptimizerRecord};
pub use discriminator::{
    spectrum_features, Discriminator, FourierDiscriminator, FourierDiscriminatorConfig,
    SpatialDiscriminator, SpatialDiscriminatorConfig,
};
pub use generator::{Generator, GeneratorConfig};
pub use init::{glorot_uniform, layer_rng};
pub use layers::{
    avg_pool2, conv3x3_backward, conv3x3_forward, dense_forward, leaky_relu, pixel_shuffle,
    pixel_unshuffle, AvgPool2, Conv3x3, Dense, Layer, LeakyRelu, Module, Param, PixelShuffle,
    Sequential, LEAKY_SLOPE,
};
