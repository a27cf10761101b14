//! Minimal CNN engine: layers, a static graph with reverse-mode
//! differentiation, and the Adam optimiser.

pub mod conv;
pub mod graph;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod param;

pub use conv::{Conv2d, ConvGeometry};
pub use graph::{GradRequest, Gradients, Mode, Network, NetworkBuilder, Node, NodeId, Op, Trace};
pub use norm::BatchNorm;
pub use ops::{Activation, Linear, PoolGeometry};
pub use optim::{argmax, softmax, softmax_cross_entropy, Adam};
pub use param::Param;
