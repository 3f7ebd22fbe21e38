//! Layer primitives with hand-written backward passes.

mod activation;
mod conv;
mod param;
mod shuffle;

pub use activation::{relu, relu_backward, sigmoid, PRelu};
pub use conv::Conv2d;
pub use param::{param_count, Param, Parameterized};
pub(crate) use param::join;
pub use shuffle::{depth_to_space, space_to_depth};
