//! In-process synthetic oracle backend.
//!
//! Generation renders the true object at the conditioning viewpoint displaced
//! by the requested change, plus seeded pseudo-noise whose standard deviation
//! grows with the angular size of the change. Denoising inverts the forward
//! process around the oracle's own generation:
//! `ε̂ = (x_t − α_t · G(cond, change)) / σ_t`.
//!
//! The oracle learns the conditioning viewpoint from the image itself: every
//! image it renders carries an [`ORACLE_VIEW_KEY`] text tag (kept through PNG
//! storage). Images without the tag are rejected.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::render::OracleObject;
use super::{Backend, BackendDescriptor, DenoiseRequest, GenerationRequest, GenerationResult};
use crate::error::{Error, Result};
use crate::geometry::{ViewChange, Viewpoint};
use crate::imaging::{ImageBuffer, NoiseSchedule, TensorBuffer};
use crate::rng::{fnv1a_f32, StreamKey};

pub const ORACLE_VIEW_KEY: &str = "oracle-view";

const DEGRADE_TAG: u64 = 0x6465_6772_6164_65; // "degrade"
const DENOISE_TAG: u64 = 0x6465_6e6f_6973_65; // "denoise"
/// Targets closer than this to a pole are pulled back onto the sphere cap boundary.
const POLE_MARGIN_DEG: f64 = 0.01;
const RENDER_CACHE_BYTES: usize = 64 << 20;

/// Generation-quality decay: noise std `gain · (a / 180)^exponent` for a
/// change of great-circle angle `a` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationModel {
    pub gain: f64,
    pub exponent: f64,
}

impl DegradationModel {
    pub const PERFECT: DegradationModel = DegradationModel { gain: 0.0, exponent: 1.0 };

    pub fn new(gain: f64, exponent: f64) -> Result<Self> {
        if !(gain >= 0.0 && gain.is_finite()) || !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "degradation needs gain >= 0 and exponent > 0, got ({gain}, {exponent})"
            )));
        }
        Ok(DegradationModel { gain, exponent })
    }

    pub fn std_dev(&self, angle_deg: f64) -> f64 {
        if self.gain == 0.0 || angle_deg <= 0.0 {
            return 0.0;
        }
        self.gain * (angle_deg / 180.0).powf(self.exponent)
    }
}

impl Default for DegradationModel {
    fn default() -> Self {
        Self::PERFECT
    }
}

/// Renders the object at `v` and tags the image with its provenance.
pub fn oracle_render(object: &OracleObject, v: &Viewpoint, size: usize) -> Result<GenerationResult> {
    let pixels = object.render_pixels(v, size)?;
    let encoding = TensorBuffer::new(vec![size, size, 3], pixels)?;
    let image = ImageBuffer::from_tensor(&encoding)?.with_meta(ORACLE_VIEW_KEY, view_tag(object.seed, v));
    Ok(GenerationResult { image, encoding })
}

fn view_tag(seed: u64, v: &Viewpoint) -> String {
    format!(
        "seed={};elevation={};azimuth={};radius={}",
        seed,
        v.elevation_deg(),
        v.azimuth_deg(),
        v.radius()
    )
}

/// Object seed and viewpoint encoded in an oracle view tag.
pub fn parse_view_tag(tag: &str) -> Result<(u64, Viewpoint)> {
    let bad = || Error::InvalidConditioning(format!("malformed oracle view tag {tag:?}"));
    let mut seed = None;
    let (mut e, mut a, mut r) = (None, None, None);
    for part in tag.split(';') {
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        match k {
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
            "elevation" => e = Some(v.parse::<f64>().map_err(|_| bad())?),
            "azimuth" => a = Some(v.parse::<f64>().map_err(|_| bad())?),
            "radius" => r = Some(v.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    match (seed, e, a, r) {
        (Some(s), Some(e), Some(a), Some(r)) => Ok((s, Viewpoint::new(e, a, r)?)),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RenderKey {
    seed: u64,
    elevation: u64,
    azimuth: u64,
    radius: u64,
}

struct RenderCache {
    capacity: usize,
    map: HashMap<RenderKey, Arc<Vec<f32>>>,
}

/// Deterministic synthetic generator/denoiser.
pub struct OracleBackend {
    descriptor: BackendDescriptor,
    size: usize,
    degradation: DegradationModel,
    objects: Mutex<HashMap<u64, Arc<OracleObject>>>,
    renders: Mutex<RenderCache>,
}

/// Oracle whose home object is `object`. Images of other objects are
/// resolved from the seed in their view tag.
pub fn make_oracle_backend(
    object: OracleObject,
    degradation: DegradationModel,
    schedule: NoiseSchedule,
    size: usize,
) -> Result<OracleBackend> {
    let backend = OracleBackend::new(degradation, schedule, size)?;
    backend.insert_object(object);
    Ok(backend)
}

impl OracleBackend {
    pub fn new(degradation: DegradationModel, schedule: NoiseSchedule, size: usize) -> Result<Self> {
        if size < 32 {
            return Err(Error::InvalidConfig(format!("oracle image size {size} < 32")));
        }
        let per_render = size * size * 3 * 4;
        Ok(OracleBackend {
            descriptor: BackendDescriptor {
                name: format!("oracle-{size}px-g{}-p{}", degradation.gain, degradation.exponent),
                working_shape: vec![size, size, 3],
                schedule,
                supports_batching: false,
            },
            size,
            degradation,
            objects: Mutex::new(HashMap::new()),
            renders: Mutex::new(RenderCache {
                capacity: (RENDER_CACHE_BYTES / per_render).max(16),
                map: HashMap::new(),
            }),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn degradation(&self) -> DegradationModel {
        self.degradation
    }

    pub fn insert_object(&self, object: OracleObject) -> Arc<OracleObject> {
        let object = Arc::new(object);
        self.objects
            .lock()
            .expect("object registry poisoned")
            .insert(object.seed, object.clone());
        object
    }

    pub fn object(&self, seed: u64) -> Arc<OracleObject> {
        if let Some(o) = self.objects.lock().expect("object registry poisoned").get(&seed) {
            return o.clone();
        }
        // Built outside the lock; a racing duplicate is identical.
        self.insert_object(OracleObject::from_seed(seed))
    }

    /// Tagged render of object `seed` at `v`, at the backend's size.
    pub fn render_view(&self, seed: u64, v: &Viewpoint) -> Result<GenerationResult> {
        oracle_render(&self.object(seed), v, self.size)
    }

    fn recognize(&self, cond: &ImageBuffer) -> Result<(Arc<OracleObject>, Viewpoint)> {
        let tag = cond.meta(ORACLE_VIEW_KEY).ok_or_else(|| {
            Error::InvalidConditioning("image was not rendered by an oracle (no view tag)".into())
        })?;
        let (seed, v) = parse_view_tag(tag)?;
        Ok((self.object(seed), v))
    }

    fn target(cond: &Viewpoint, change: &ViewChange) -> Result<Viewpoint> {
        let t = cond.displaced(change)?;
        let limit = 90.0 - POLE_MARGIN_DEG;
        if t.elevation_deg().abs() > limit {
            return Viewpoint::new(limit.copysign(t.elevation_deg()), t.azimuth_deg(), t.radius());
        }
        Ok(t)
    }

    fn clean_render(&self, object: &OracleObject, v: &Viewpoint) -> Result<Arc<Vec<f32>>> {
        let key = RenderKey {
            seed: object.seed,
            elevation: v.elevation_deg().to_bits(),
            azimuth: v.azimuth_deg().to_bits(),
            radius: v.radius().to_bits(),
        };
        if let Some(hit) = self.renders.lock().expect("render cache poisoned").map.get(&key) {
            return Ok(hit.clone());
        }
        let pixels = Arc::new(object.render_pixels(v, self.size)?);
        let mut cache = self.renders.lock().expect("render cache poisoned");
        if cache.map.len() >= cache.capacity {
            cache.map.clear();
        }
        cache.map.insert(key, pixels.clone());
        Ok(pixels)
    }

    /// Encoding of the view of `object` from `cond` displaced by `change`,
    /// with degradation noise drawn from the stream selected by `z`.
    fn generation(
        &self,
        object: &OracleObject,
        cond: &Viewpoint,
        change: &ViewChange,
        z: u64,
    ) -> Result<(Viewpoint, Vec<f32>)> {
        let target = Self::target(cond, change)?;
        let clean = self.clean_render(object, &target)?;
        let std = self.degradation.std_dev(cond.angle_to(&target));
        let mut enc = clean.as_ref().clone();
        if std > 0.0 {
            let key = StreamKey::new(object.seed).derive_all(&[
                DEGRADE_TAG,
                z,
                quantize_deg(cond.elevation_deg()),
                quantize_deg(cond.azimuth_deg()),
                quantize_deg(change.d_elevation_deg),
                quantize_deg(change.d_azimuth_deg),
            ]);
            let mut noise = vec![0f32; enc.len()];
            key.fill_normal(&mut noise, std);
            for (e, n) in enc.iter_mut().zip(&noise) {
                *e += *n;
            }
        }
        Ok((target, enc))
    }
}

/// Angle on the 0.1° grid, as a stream word.
fn quantize_deg(deg: f64) -> u64 {
    (deg * 10.0).round() as i64 as u64
}

impl Backend for OracleBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GenerationResult> {
        req.validate()?;
        let (object, cond) = self.recognize(req.cond)?;
        let (target, enc) = self.generation(&object, &cond, &req.change, req.seed)?;
        let encoding = TensorBuffer::new(self.descriptor.working_shape.clone(), enc)?;
        let image = ImageBuffer::from_tensor(&encoding)?.with_meta(ORACLE_VIEW_KEY, view_tag(object.seed, &target));
        Ok(GenerationResult { image, encoding })
    }

    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<TensorBuffer> {
        req.validate(&self.descriptor)?;
        let (object, cond) = self.recognize(req.cond)?;
        // The denoiser's own generation randomness follows its input.
        let z = StreamKey::new(fnv1a_f32(req.noisy.data())).derive(DENOISE_TAG).0;
        let (_, enc) = self.generation(&object, &cond, &req.change.angular(), z)?;
        let schedule = &self.descriptor.schedule;
        let (a, s) = (schedule.alpha(req.t_index), schedule.sigma(req.t_index));
        let eps = req
            .noisy
            .data()
            .iter()
            .zip(&enc)
            .map(|(x, g)| ((*x as f64 - a * *g as f64) / s) as f32)
            .collect();
        TensorBuffer::new(req.noisy.shape().to_vec(), eps)
    }
}
