pub mod config;
pub mod error;
pub mod experiment;
pub mod finetune;
pub mod gnn;
pub mod graph;
pub mod mask;
pub mod pretrain;
pub mod rng;
pub mod sampler;
pub mod tensor;

pub use config::TrainConfig;
pub use error::{Error, Result};
