pub mod aewf;
pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gcm;
pub mod gla;
pub mod gradcheck;
pub mod gradsuite;
pub mod imageio;
pub mod lcm;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::ImageGroup;
pub use error::{Error, Result};
pub use model::{GlNet, ModelConfig};
pub use tensor::{Scalar, Tensor};
pub use train::TrainConfig;
