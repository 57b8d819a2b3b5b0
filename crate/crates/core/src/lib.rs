pub mod datasets;
pub mod error;
pub mod expost;
pub mod gaussmath;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod neural;
pub mod postprocess;
pub mod unscented;
pub mod types;

pub use error::{Error, Result};
pub use gaussmath::{DiagGaussian, DiscreteDist, FullGaussian, GaussianMixture};
pub use models::{Model, ModelConfig, Variant};
pub use types::{Cov2, OutputGmm, PredictionSet, SceneContext, Trajectory, TrajectoryCov, TIMESTEP};
