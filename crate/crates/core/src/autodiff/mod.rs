//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Values are [`Tensor`]s: row-major, channel-last arrays of rank ≤ 4.
//! A [`Tape`] records every operation whose inputs participate in it;
//! [`backward`] replays the record in reverse and accumulates gradients
//! into every participating tensor. Tensors not attached to a tape are
//! plain immutable values, and operations on them evaluate eagerly
//! without recording anything.
//!
//! Storage precision is the generic scalar `T` (f32 in the training
//! pipelines); gradient verification instantiates the same code at f64.
//!
//! A tape is single-threaded. Individual operations may parallelize
//! internally over disjoint output regions with fixed chunking, so
//! forward and backward results are bit-identical across runs.

mod conv;
mod ops;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use ops::{
    add, backward, broadcast_planes, channel_mean, concat_channels, conv2d, downsample2,
    mse_loss, mul, relu, sigmoid, sub, sum_all, upsample2, zero_grad,
};
pub use tape::Tape;
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("{op}: channel count mismatch ({expected} expected, {got} given)")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op} requires even spatial extents, got {h}x{w}")]
    OddExtent { op: &'static str, h: usize, w: usize },
    #[error("{op}: kernel size {k} unsupported (odd sizes up to 5 only)")]
    BadKernel { op: &'static str, k: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward on a tensor that is not attached to a tape")]
    DetachedLoss,
    #[error("tape has been cleared; node handles are invalid")]
    ClearedTape,
    #[error("operation mixes tensors from two different tapes")]
    MixedTapes,
    #[error("mse_loss target must be detached from the tape")]
    TargetAttached,
    #[error("rank {rank} exceeds the supported maximum of 4")]
    RankTooHigh { rank: usize },
}

pub type Result<V> = std::result::Result<V, AutodiffError>;
