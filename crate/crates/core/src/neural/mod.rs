//! Convolutional regressor from envelope patches to scatterer parameter maps.

pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod train;
pub mod weights;

pub use network::{build_network, LayerKind, LayerSpec, Network};
pub use optim::{adam_step, loss_l1, AdamConfig, AdamState};
pub use train::{train, DataConfig, LossRecord, TrainConfig, TrainOutcome};
pub use weights::NetworkWeights;
