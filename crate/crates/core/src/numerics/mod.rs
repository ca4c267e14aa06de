//! Dense tensors, reverse-mode differentiation, and the Adam update.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, Activation, Gradients, Graph, NodeId, BCE_CLAMP, NORM_FLOOR};
pub use layers::{conv1d_single_channel, GruCell, Linear, Mlp2};
pub use params::{AdamState, ParamId, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tensor::Tensor;
