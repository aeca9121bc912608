//! Desk-scale decoder-only transformer with randomized cross-layer KV
//! routing, depth-wise cache sharing at inference, exact cache-memory
//! accounting, and a benchmark/evaluation harness.
//!
//! The crate is organized around the lifecycle of a KV entry:
//!
//! - [`tensor`] / [`graph`]: dense tensors and reverse-mode autodiff.
//! - [`model`]: the transformer whose attention accepts an external KV
//!   source, enabling cross-layer attention.
//! - [`routing`]: who provides KV to whom — stochastic training routing and
//!   deterministic sharing strategies.
//! - [`cache`]: the inference-time store with leader/non-leader handling and
//!   byte-exact footprint accounting.
//! - [`train`], [`data`], [`bench`]: the training loop, synthetic tasks, and
//!   the measurement harness around everything above.

pub mod bench;
pub mod cache;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod mem;
pub mod model;
pub mod routing;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use graph::{Graph, GraphError, NodeId};
pub use model::{Model, ModelConfig};
pub use routing::{RoutingPlan, SharingStrategy, TrainingRoutingMode};
pub use scalar::Scalar;
pub use tensor::Tensor;
