//! Forward and backward implementations of the decoder's operators.

pub mod act;
pub mod conv;
pub mod norm;

pub use act::{silu, silu_backward};
pub use conv::{
    conv3d, conv3d_backward, conv3d_param_count, depthwise_conv3d, depthwise_conv3d_backward,
    dwsep_conv3d, dwsep_conv3d_backward, dwsep_param_count, fold_dwsep_to_full, Conv3dGrads,
    Conv3dParams, DwSepConv3dParams, DwSepGrads, PadMode, PadSpec,
};
pub use norm::{group_norm, group_norm_backward, GroupNormGrads, GroupNormParams};
