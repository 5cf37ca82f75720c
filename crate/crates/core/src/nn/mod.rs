//! Complex-valued layers, reverse-mode differentiation and optimisation.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{grad_check, Evaluation, GradCheckReport, TensorCheck};
pub use layers::{
    causal_chomp, complex_conv, complex_instance_norm, complex_prelu, BlockParams, BlockStream, ComplexConvParams,
    ConvAxis, ConvSpec, ConvVars, LightBlock, LightBlockConfig,
};
pub use params::{filled_tensor, uniform_tensor, ParamStore};
pub use tape::{DiffTensor, Tape, Var};
