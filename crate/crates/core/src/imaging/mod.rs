//! Working-space tensors, display images, and the diffusion forward process.

mod image;
mod schedule;
pub(crate) mod tensor;

pub use image::{dequantize, quantize, ImageBuffer};
pub use schedule::{
    add_noise, make_schedule, sample_noise, NoiseSample, NoiseSchedule, DEFAULT_BETA_END,
    DEFAULT_BETA_START, DEFAULT_T_TOTAL,
};
pub use tensor::TensorBuffer;
