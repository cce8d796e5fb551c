//! Shared bottoms (DCN-V2, FT-Transformer), MMoE heads, the multi-task loss
//! and training.

mod checkpoint;
mod config;
pub mod dcn;
pub mod ftt;
pub mod layers;
mod loss;
pub mod mmoe;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{BottomKind, DcnConfig, FttConfig, MmoeConfig, ModelConfig, Task, TrainConfig};
pub use dcn::{cross_layer, DcnBottom, X0Layout};
pub use ftt::{project_matching, tokenize_numeric, FttBottom};
pub use loss::mtl_loss;
pub use mmoe::{gate_forward, mix_experts, Mmoe, TaskOutputs};
pub use model::{Bottom, ForwardTrace, Model, Network, Predictions};
pub use train::{evaluate_loss, train, EpochLog, TrainLog};
