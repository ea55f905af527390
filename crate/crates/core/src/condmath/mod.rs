//! Conditioning arithmetic on `f64` tensors.

mod modulation;
mod posenc;
mod weights;

pub use modulation::{
    action_embed, adaln_modulate, adaln_parameters, fuse_conditions, layer_norm, modulate, silu, AdaLNOutput,
    Modulation, LAYER_NORM_EPS,
};
pub use posenc::{grid_positions, sincos_pe};
pub use weights::{AdaLNWeights, FusionMode, FusionWeights, Mlp, Tensor, WeightArchive};
