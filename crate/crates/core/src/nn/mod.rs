//! Minimal CPU neural-network engine: residual 1-D CNN layers with manual
//! backward passes, softmax cross-entropy, AdamW, and a weights file format.

pub mod gradcheck;
pub mod layers;
mod loss;
mod network;
mod optim;
mod spec;
mod tensor;
pub mod weights;

pub use layers::{BatchNorm1d, Conv1d, Flatten, Linear, MaxPool1d, Relu, ResBlock, TensorKind};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{Layer, Module, Network};
pub use optim::{AdamW, AdamWConfig};
pub use spec::{
    build_sync_model, count_flops, count_params, FlopReport, Head, LayerCost, LayerSpec, ModelSpec,
    Shape,
};
pub use tensor::{Scalar, Tensor};
pub use weights::{load_model, save_model, ModelMeta};
