//! The non-differentiable black box `f_bb(x; θ)` and its parameter space.
//!
//! A [`BlackBox`] is a pure evaluator: identical `(image, params)` inputs
//! produce bit-identical outputs, and no gradient is available. The
//! built-in [`SimBm3d`] is a miniature block-matching transform-domain
//! denoiser exposing the 5-dimensional search space; [`ExternalBlackBox`]
//! adapts any subprocess speaking the `XBB1` wire protocol.

mod external;
mod sim_bm3d;
mod space;
mod synthetic;

pub use external::{run_echo_server, ExternalBlackBox, FRAME_ERROR, FRAME_REQUEST, FRAME_RESPONSE};
pub use sim_bm3d::SimBm3d;
pub use space::{
    normalize, param_planes, quantize, validate, ConcreteParams, DimKind, NormalizedParams,
    ParamDim, ParamSpace,
};
pub use synthetic::{IdentityBox, ShiftBox};

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum BlackBoxError {
    #[error("expected {expected} parameters, got {got}")]
    WrongParamCount { expected: usize, got: usize },
    #[error("value {value} is not in dimension {dim}")]
    ValueOutOfRange { dim: String, value: f64 },
    #[error("image {h}x{w} too small for block geometry (needs at least {min}x{min})")]
    ImageTooSmall { h: usize, w: usize, min: usize },
    #[error("expected {expected} channels, got {got}")]
    WrongChannelCount { expected: usize, got: usize },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("black box reported an error: {0}")]
    Peer(String),
    #[error("black box timed out after {seconds} s")]
    Timeout { seconds: u64 },
    #[error("subprocess failure: {0}")]
    Subprocess(String),
}

pub type Result<V> = std::result::Result<V, BlackBoxError>;

/// A deterministic, gradient-free image operator with a declared
/// parameter space.
pub trait BlackBox: Send + Sync {
    fn space(&self) -> &ParamSpace;

    /// Evaluates the operator. `image` is HxWxC in `[0,1]`; the output
    /// has the same shape and range.
    fn evaluate(&self, image: &Image, params: &ConcreteParams) -> Result<Image>;
}
