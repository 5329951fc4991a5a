//! Minimal reverse-mode network engine: dense layers, batch normalization,
//! ReLU and softmax cross-entropy, trained with plain SGD.

mod checkpoint;
mod layers;
mod model;
mod params;
mod tensor;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_model, params_to_tensors, read_tensors, save_model,
    tensors_to_params, write_tensors, NamedTensor,
};
pub use layers::{BatchNormLayer, DenseLayer, BN_EPSILON, BN_MOMENTUM};
pub use model::{Block, BnMlp, Mode};
pub use params::{Layout, LayoutEntry, ParamKind, ParamVector};
pub use tensor::Tensor2;
