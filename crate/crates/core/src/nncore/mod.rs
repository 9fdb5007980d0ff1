//! Minimal CNN engine: tensors, layers, loss, optimizer, training loop.
//!
//! The engine is deliberately small: valid (no-padding) convolution,
//! max-pooling, fully-connected layers, ReLU, and a final softmax, trained
//! with SGD + momentum + weight decay under early stopping. All operations
//! are generic over the scalar type so that training runs in `f32` while
//! gradient checks can instantiate the same code in `f64`.

pub mod layers;
pub mod model_io;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use layers::{
    conv_backward, conv_forward, cross_entropy_loss, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax,
};
pub use model_io::{load_model, save_model, MODEL_MAGIC};
pub use network::{
    predict, topk, LayerParams, LayerSpec, NetworkSpec, NetworkState,
};
pub use optim::{lr_schedule, sgd_step, TrainConfig};
pub use tensor::{Scalar, Tensor};
pub use train::{evaluate_accuracy, train, EarlyStopping, EpochLog, SampleSet, StopReason, TrainLog};
