//! Imputation of missing entries in sparse station × parameter × time
//! tensors.
//!
//! The main model is a biased CP factorization whose temporal factors are
//! passed through a causal convolution and a sigmoid, with a sigmoid on the
//! final estimate ([`model::ClrParams`]). It is trained by per-entry SGD
//! ([`sgd`]) with the learning rate and regularization optionally adapted
//! online by a particle swarm ([`pso`]). A plain biased CP model
//! ([`baseline::BiasCpParams`]) serves as the comparison point.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod factor;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pso;
pub mod sgd;
pub mod split;
pub mod synth;
pub mod tensor;

pub use baseline::BiasCpParams;
pub use checkpoint::{Checkpoint, Model};
pub use model::{ClrParams, Prediction};
pub use pso::{tune_train, Hyperparams, SwarmConfig};
pub use sgd::{train, TrainConfig, TrainReport};
pub use split::{split, SplitAssignment, Splits};
pub use tensor::{load_coo, Dims, Entry, EntryIndex, SparseTensor};
