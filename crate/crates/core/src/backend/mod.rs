//! Novel-view generator/denoiser interface.
//!
//! The engine only ever talks to a [`Backend`]: `generate` renders the
//! conditioning object from a displaced viewpoint, `denoise` predicts the
//! noise in a noised working-space tensor given a conditioning image and a
//! viewpoint change.

mod oracle;
mod render;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use oracle::{
    make_oracle_backend, oracle_render, parse_view_tag, DegradationModel, OracleBackend,
    ORACLE_VIEW_KEY,
};
pub use render::{Blob, OracleObject, RenderCamera, CAMERA_DISTANCE, FIELD_OF_VIEW_DEG};

use crate::error::{Error, Result};
use crate::geometry::ViewChange;
use crate::imaging::{ImageBuffer, NoiseSchedule, TensorBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub name: String,
    pub working_shape: Vec<usize>,
    pub schedule: NoiseSchedule,
    pub supports_batching: bool,
}

impl BackendDescriptor {
    pub fn numel(&self) -> usize {
        self.working_shape.iter().product()
    }
}

/// Generate a view of the object in `cond`, displaced by `change`.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub cond: &'a ImageBuffer,
    pub change: ViewChange,
    /// Generation randomness.
    pub seed: u64,
}

impl GenerationRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.change.d_radius != 0.0 {
            return Err(Error::InvalidConditioning(format!(
                "radius change must be 0, got {}",
                self.change.d_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Display-space view.
    pub image: ImageBuffer,
    /// Working-space encoding of the same view.
    pub encoding: TensorBuffer,
}

/// Predict the noise in `noisy` given conditioning `(cond, change)`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseRequest<'a> {
    pub noisy: &'a TensorBuffer,
    pub t_index: usize,
    pub cond: &'a ImageBuffer,
    pub change: ViewChange,
}

impl DenoiseRequest<'_> {
    pub fn validate(&self, desc: &BackendDescriptor) -> Result<()> {
        self.noisy.ensure_shape(&desc.working_shape)?;
        if self.t_index >= desc.schedule.t_total() {
            return Err(Error::InvalidConfig(format!(
                "t_index {} >= T = {}",
                self.t_index,
                desc.schedule.t_total()
            )));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GenerationResult>;

    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<TensorBuffer>;

    /// Positionally aligned with `reqs`.
    fn denoise_batch(&self, reqs: &[DenoiseRequest<'_>]) -> Result<Vec<TensorBuffer>> {
        reqs.iter().map(|r| self.denoise(r)).collect()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GenerationResult> {
        (**self).generate(req)
    }
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<TensorBuffer> {
        (**self).denoise(req)
    }
    fn denoise_batch(&self, reqs: &[DenoiseRequest<'_>]) -> Result<Vec<TensorBuffer>> {
        (**self).denoise_batch(reqs)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GenerationResult> {
        (**self).generate(req)
    }
    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<TensorBuffer> {
        (**self).denoise(req)
    }
    fn denoise_batch(&self, reqs: &[DenoiseRequest<'_>]) -> Result<Vec<TensorBuffer>> {
        (**self).denoise_batch(reqs)
    }
}

/// Pass-through backend that counts calls.
pub struct CountingBackend<B> {
    inner: B,
    generate_calls: AtomicUsize,
    denoise_calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            generate_calls: AtomicUsize::new(0),
            denoise_calls: AtomicUsize::new(0),
        }
    }

    pub fn generate_calls(&self) -> usize {
        self.generate_calls.load(Ordering::Relaxed)
    }

    /// Individual denoise evaluations, batched or not.
    pub fn denoise_calls(&self) -> usize {
        self.denoise_calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.generate_calls.store(0, Ordering::Relaxed);
        self.denoise_calls.store(0, Ordering::Relaxed);
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GenerationResult> {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.generate(req)
    }

    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<TensorBuffer> {
        self.denoise_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.denoise(req)
    }

    fn denoise_batch(&self, reqs: &[DenoiseRequest<'_>]) -> Result<Vec<TensorBuffer>> {
        self.denoise_calls.fetch_add(reqs.len(), Ordering::Relaxed);
        self.inner.denoise_batch(reqs)
    }
}
