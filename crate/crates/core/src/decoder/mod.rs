//! Configurable hybrid decoder: mid block + up blocks with separable-conv
//! placement, decoupled upsampling, parameter accounting, and the
//! backward pass used by the distillation trainer.

pub mod config;
pub mod graph;
pub mod params;

pub use config::{
    preset, preset_4_32_32, preset_4_8_8, preset_8_32_32, tiny_config, BlockConfig, ConvKind,
    DecoderConfig, HeadConfig, LatentSpec,
};
pub use graph::{init_weights, validate_store, CompiledDecoder, DecoderTape, FeatureMap};
pub use params::{count_params, redundancy_sweep, ParamReport, SweepRow};
