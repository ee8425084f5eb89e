//! Minimal tensor engine: forward evaluation and reverse-mode
//! differentiation for sequential networks of convolutions, pooling,
//! upsampling, fully connected layers and pointwise activations.

mod gradcheck;
mod kernels;
mod network;
mod ops;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_report, relative_error, GradCheckReport, FD_STEP, RELATIVE_FLOOR,
};
pub use network::{
    ActivationTrace, BackwardMode, Gradients, Init, LayerSpec, NetworkSpec, ParamTable,
};
pub use ops::{apply_activation, avg_pool2x2, conv2d, fully_connected, upsample_nn2x, Activation};
pub use tensor::{DType, Element, Tensor};
