//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters live in a
//! [`ParamStore`] outside the graph, are bound as leaves per pass, and
//! receive their gradients back through [`ParamStore::accumulate_grads`].

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_coords, grad_check_sampled, relative_error, Coord, SampledCheck, DEFAULT_EPS, MIN_RESOLVABLE,
};
pub use graph::{Graph, OpKind, Var};
pub use params::{uniform, xavier_uniform, Bindings, ParamId, ParamStore};
pub use tensor::Tensor;
