//! The four trainable variants (CVAE, CUAE, GMM-CVAE, GMM-CUAE): latent
//! heads, decoder, losses, training and inference.

mod config;
pub mod losses;
mod network;
mod objective;
mod predict;
mod train;

pub use config::{ModelConfig, Variant};
pub use losses::{
    loss_kl_gmm, loss_rec_dist, loss_rec_gmm, loss_rec_samples, mean_trajectory, output_gmm, winner_by_ade,
};
pub use network::{from_planar, planar, Dims, LatentEncoding, Model};
pub use objective::{objective, objective_gradients, sigma_selection};
pub use train::{evaluate_loss, log_csv, resume, train, train_epoch, Checkpoint, EpochLog};
pub use predict::{InferenceMode, PredictOptions, Prediction};
