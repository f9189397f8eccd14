//! Mini-ResNet construction, training, prediction and checkpoints.

mod checkpoint;
mod resnet;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use resnet::{build_mini_resnet, he_normal};
pub use train::{evaluate, train, write_metrics_log, EpochMetrics, TrainConfig};

use crate::autodiff;
use crate::error::Result;
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

/// Predicted class (lowest index on ties) and the confidence vector.
pub fn predict<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<(usize, Vec<T>)> {
    let probs = autodiff::forward(net, image)?.probabilities().to_vec();
    Ok((argmax(&probs), probs))
}
