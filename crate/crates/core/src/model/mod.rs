//! The LBCCN model: configuration, network, predictors, streaming,
//! training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod predictor;
pub mod stream;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, TrainingMetadata};
pub use config::{KernelSizes, LbccnConfig, PredictorVariant};
pub use network::{architecture, HeadOutputs, LayerSpec, LbccnModel};
pub use predictor::{apply_mask_plus_ratf, apply_masks, restore};
pub use stream::{enhance_streaming, StreamState};
pub use train::{train, Example, TrainConfig, Trainer};
