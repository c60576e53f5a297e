//! Multi-task fully convolutional segmentation network.
//!
//! A shared six-stage encoder (strides 2,2,2,2,2,1) feeds two decoders,
//! one predicting food classes and one predicting plate classes. Each
//! decoder alternates stride-2 transposed convolutions with convolutions
//! over the concatenation of the upsampled features and the encoder output
//! at the same resolution, and ends in a 1×1 convolution + softmax.

mod checkpoint;
mod gradcheck;
mod network;
pub mod ops;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, relative_error, GradCheckEntry, GradCheckReport};
pub use network::{frame_tensor, loss, Network, NetworkConfig, TensorStore, ENCODER_STRIDES, TABLE_FILTERS};
pub use ops::Tensor;
pub use train::{
    evaluate_loss, pixel_accuracy, train, Adam, EarlyStopping, EpochStats, TrainConfig,
    TrainHistory, TrainSample,
};
