//! SubspaceNet: learned point embeddings for multi-type subspace clustering.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataio`]: instance/dataset formats, one-hot labels, trajectory flattening.
//! - [`geometry`]: conic algebra, synthetic scene generators and the classical
//!   sequential RANSAC fitting baseline.
//! - [`network`]: the residual MLP embedding network with hand-written backward pass.
//! - [`losses`]: clustering losses on the embedding and their gradients.
//! - [`training`]: Adam, label subsampling and the training loop.
//! - [`inference`]: K-means, residual curves and number-of-clusters selection.
//! - [`metrics`]: error rate, NMI and precision/recall/F-measure.

pub mod dataio;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod training;

pub use dataio::{Dataset, Instance, OneHotLabels, Split};
pub use inference::ClusterResult;
pub use losses::{LossEval, LossKind};
pub use network::{Embedding, ForwardTape, NetworkConfig, NetworkParams};
pub use training::{TrainConfig, TrainLog};
