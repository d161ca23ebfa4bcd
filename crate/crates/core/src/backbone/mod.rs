//! The segmentation backbone: tensors, parameters, kernels, the network and
//! its autodiff contract.

pub mod attention;
pub mod grad;
pub mod lora;
pub mod net;
pub mod ops;
pub mod params;
pub mod prob;
pub mod tensor;

pub use grad::{loss_and_grad, loss_only, LossAndGrad, LossEvaluator};
pub use lora::{lora_apply, LoraShape};
pub use net::{ArchConfig, DropoutMode, ForwardCache, TinyZoneNet};
pub use params::{Gradients, Param, ParamSet};
pub use prob::{softmax, softmax_backward, ProbMap};
pub use tensor::Tensor;
