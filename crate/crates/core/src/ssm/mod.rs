//! Online-trained selective state space model.

pub mod config;
pub mod forward;
pub mod math;
pub mod model;
pub mod params;
pub mod rng;
pub mod train;

#[cfg(test)]
mod gradcheck;

pub use config::ModelConfig;
pub use forward::{SsmState, StepCache};
pub use model::OnlineModel;
pub use params::{init_params, param_count, ParamLayout};
pub use train::{adam_update, chunk_loss, train_chunk, warmup_iters, AdamState, Trainer};
