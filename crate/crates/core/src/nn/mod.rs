//! Minimal layer library with explicit forward/backward passes.
//!
//! Layers do not record a tape. Callers keep whatever inputs a layer's
//! backward pass needs and hand them back in, which keeps every network's
//! gradient path readable in one place.

mod act;
mod conv;
mod linear;
mod norm;
mod optim;
mod param;
mod resample;

pub use act::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, tanh, tanh_backward,
    LEAKY_SLOPE,
};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{BatchNorm2d, BnStats};
pub use optim::Adam;
pub use param::{init_rng, join as param_name, Module, Param, ParamKind};
pub use resample::{
    global_avg_pool, global_avg_pool_backward, max_pool2, max_pool2_backward, upsample2,
    upsample2_backward,
};

/// Whether normalization layers use batch statistics or running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
