pub mod net;
pub mod params;

pub use net::{forward, gradient, loss_ce, predict_proba, Batch, Cache};
pub use params::{init_params, ModelConfig, Weights};
