//! Layers, blocks and the PAN model assembler.

mod blocks;
mod layers;
mod model;
mod params;

pub use blocks::{Block, ResidualBlock, ScpaBlock, UpaBlock};
pub use layers::{
    Activation, Attention, ChannelAttention, Conv2d, Grid, LayerCost, LayerKind, PixelAttention,
    SpatialAttention,
};
pub use model::{BiasPolicy, BlockType, Model, ModelConfig, Pan, SUPPORTED_SCALES};
pub use params::{InitScheme, Param, ParamId, ParamLayout, ParamSpec, ParamStore};
