//! Latent diffusion primitives: the DDPM schedule, the sampling equations,
//! keyed noise, sampling plans, and the denoiser and codec interfaces.

mod codec;
pub mod contract;
mod latent;
mod noise;
mod oracle;
mod plan;
mod schedule;
mod step;

use thiserror::Error;

pub use codec::{BoxCodec, LatentCodec};
pub use latent::LatentFrame;
pub use noise::{NoiseKey, NoiseSource, Purpose};
pub use oracle::{
    Cell, DenoiseRequest, DenoiserOracle, Direction, ExactOracle, SmoothingOracle, ZeroOracle,
};
pub use plan::{PlannedStep, SamplingPlan};
pub use schedule::{make_schedule, NoiseSchedule, Step};
pub use step::{forward_noise, posterior_step, predict_z0, resample_noise, DenoiserOutput};

pub type Shape = (usize, usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("invalid step from {t} to {prev}")]
    InvalidStep { t: usize, prev: usize },
    #[error("latent shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("latent buffer of length {len} does not hold shape {shape:?}")]
    BadBuffer { shape: Shape, len: usize },
    #[error("negative variance {value} at element {index}")]
    NegativeVariance { index: usize, value: f64 },
    #[error("image {width}x{height} is not divisible by codec factor {factor}")]
    Indivisible {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),
    #[error("expected {expected} frames, got {got}")]
    FrameCount { expected: usize, got: usize },
    #[error("oracle has no target for cell (time {time}, view {view})")]
    UnknownCell { time: usize, view: usize },
    #[error("denoiser failed: {0}")]
    Oracle(String),
}
