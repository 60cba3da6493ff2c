//! A small convolutional encoder-decoder with hand-written reverse-mode
//! gradients, the NPCC loss, and Adam.
//!
//! The architecture follows the residual encoder-decoder layout: a stem
//! convolution, down-residual blocks (stride-2), up-residual blocks (stride-2
//! transposed), skip connections concatenated at matching scales, constant-size
//! residual blocks, and a linear output head.

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod network;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState, Moments};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Conv2d, ConvTranspose2d, LeakyRelu, LEAKY_SLOPE};
pub use loss::{npcc, npcc_batch, npcc_with_grad};
pub use network::{Network, NetworkConfig};
pub use tensor::Tensor;
pub use train::{encode_measurement, train, EpochReport, TrainConfig, TrainReport, TrainingPair};
