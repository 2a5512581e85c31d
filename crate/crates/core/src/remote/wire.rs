//! Protocol message bodies. Float payloads travel as base64 little-endian
//! `f32`, images as base64 PNG.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendDescriptor, DenoiseRequest, GenerationRequest, GenerationResult};
use crate::error::{Error, Result};
use crate::geometry::ViewChange;
use crate::imaging::{ImageBuffer, NoiseSchedule, TensorBuffer};

pub const PROTOCOL_VERSION: u32 = 1;

fn current_version() -> u32 {
    PROTOCOL_VERSION
}

pub(crate) fn check_version(version: u32) -> Result<()> {
    if version != PROTOCOL_VERSION {
        return Err(Error::ProtocolMismatch(format!(
            "peer speaks protocol version {version}, this build speaks {PROTOCOL_VERSION}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data_b64: String,
}

impl WireTensor {
    pub fn from_tensor(t: &TensorBuffer) -> Self {
        WireTensor {
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            data_b64: t.data_b64(),
        }
    }

    pub fn to_tensor(&self) -> Result<TensorBuffer> {
        if self.dtype != "f32" {
            return Err(Error::InvalidTensor(format!("unsupported dtype {:?}", self.dtype)));
        }
        TensorBuffer::from_b64(self.shape.clone(), &self.data_b64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorReply {
    pub version: u32,
    pub name: String,
    pub working_shape: Vec<usize>,
    pub t_total: usize,
    pub alpha_bar: Vec<f64>,
}

impl DescriptorReply {
    pub fn from_descriptor(d: &BackendDescriptor) -> Self {
        DescriptorReply {
            version: PROTOCOL_VERSION,
            name: d.name.clone(),
            working_shape: d.working_shape.clone(),
            t_total: d.schedule.t_total(),
            alpha_bar: d.schedule.alpha_bar().to_vec(),
        }
    }

    pub fn to_descriptor(&self) -> Result<BackendDescriptor> {
        check_version(self.version)?;
        if self.alpha_bar.len() != self.t_total {
            return Err(Error::ProtocolMismatch(format!(
                "t_total {} but {} alpha_bar entries",
                self.t_total,
                self.alpha_bar.len()
            )));
        }
        if self.working_shape.is_empty() || self.working_shape.contains(&0) {
            return Err(Error::ProtocolMismatch(format!(
                "unusable working shape {:?}",
                self.working_shape
            )));
        }
        Ok(BackendDescriptor {
            name: self.name.clone(),
            working_shape: self.working_shape.clone(),
            schedule: NoiseSchedule::from_alpha_bar(self.alpha_bar.clone())?,
            supports_batching: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateBody {
    #[serde(default = "current_version")]
    pub version: u32,
    pub cond_png_b64: String,
    pub d_elevation_deg: f64,
    pub d_azimuth_deg: f64,
    #[serde(default)]
    pub d_radius: f64,
    pub seed: u64,
}

impl GenerateBody {
    pub fn from_request(req: &GenerationRequest<'_>) -> Result<Self> {
        Ok(GenerateBody {
            version: PROTOCOL_VERSION,
            cond_png_b64: req.cond.to_png_b64()?,
            d_elevation_deg: req.change.d_elevation_deg,
            d_azimuth_deg: req.change.d_azimuth_deg,
            d_radius: req.change.d_radius,
            seed: req.seed,
        })
    }

    pub fn change(&self) -> ViewChange {
        ViewChange::new(self.d_elevation_deg, self.d_azimuth_deg, self.d_radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReply {
    pub image_png_b64: String,
    pub encoding: WireTensor,
}

impl GenerateReply {
    pub fn from_result(r: &GenerationResult) -> Result<Self> {
        Ok(GenerateReply {
            image_png_b64: r.image.to_png_b64()?,
            encoding: WireTensor::from_tensor(&r.encoding),
        })
    }

    pub fn to_result(&self) -> Result<GenerationResult> {
        Ok(GenerationResult {
            image: ImageBuffer::from_png_b64(&self.image_png_b64)?,
            encoding: self.encoding.to_tensor()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseBody {
    #[serde(default = "current_version")]
    pub version: u32,
    pub noisy: WireTensor,
    pub t_index: usize,
    pub cond_png_b64: String,
    pub d_elevation_deg: f64,
    pub d_azimuth_deg: f64,
}

impl DenoiseBody {
    /// `cond_png_b64` is passed in so a batch can encode a shared image once.
    pub fn from_request(req: &DenoiseRequest<'_>, cond_png_b64: String) -> Self {
        DenoiseBody {
            version: PROTOCOL_VERSION,
            noisy: WireTensor::from_tensor(req.noisy),
            t_index: req.t_index,
            cond_png_b64,
            d_elevation_deg: req.change.d_elevation_deg,
            d_azimuth_deg: req.change.d_azimuth_deg,
        }
    }

    pub fn change(&self) -> ViewChange {
        ViewChange::new(self.d_elevation_deg, self.d_azimuth_deg, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReply {
    pub epsilon: WireTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRequest {
    #[serde(default = "current_version")]
    pub version: u32,
    pub items: Vec<DenoiseBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItemReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<WireTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReply {
    pub items: Vec<BatchItemReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}
