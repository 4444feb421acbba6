//! Forward-gradient training of ReLU MLPs with structured gradient guesses.

pub mod data;
pub mod error;
pub mod guess;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use data::{BatchPlan, Dataset, ImageGeometry};
pub use error::{Error, Result};
pub use guess::{estimate_gradient, Estimator, GuessContext, GuessMethod, GuessNorm, GuessOptions, GuessSet};
pub use metrics::{cosine_similarity, CosineScope, MetricRecord};
pub use network::{
    backprop, forward, init_params, ForwardTrace, GradEstimate, Gradients, MlpConfig, MlpParams, WeightSpace,
};
pub use optim::{AdamParams, OptimizerKind, OptimizerState};
pub use rng::RngStream;
pub use tensor::{Matrix, Real, Vector};
