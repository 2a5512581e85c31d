use std::collections::BTreeMap;
use std::io::{BufReader, Cursor};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::TensorBuffer;
use crate::error::{Error, Result};

/// Display-space RGB image, row-major, values in `[0, 1]`.
///
/// Text metadata travels with the image through PNG `tEXt` chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    metadata: BTreeMap<String, String>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    /// Builds an image, clamping values into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidTensor("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::InvalidTensor(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * Self::CHANNELS,
                pixels.len()
            )));
        }
        for p in pixels.iter_mut() {
            if p.is_nan() {
                return Err(Error::InvalidTensor("NaN pixel".into()));
            }
            *p = p.clamp(0.0, 1.0);
        }
        Ok(ImageBuffer {
            width,
            height,
            pixels,
            metadata: BTreeMap::new(),
        })
    }

    /// Display image of an `[H, W, 3]` tensor.
    pub fn from_tensor(t: &TensorBuffer) -> Result<Self> {
        match t.shape() {
            [h, w, 3] => Self::new(*w, *h, t.data().to_vec()),
            other => Err(Error::InvalidTensor(format!(
                "expected [H, W, 3] tensor, got {other:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> TensorBuffer {
        TensorBuffer::from_parts_unchecked(
            vec![self.height, self.width, Self::CHANNELS],
            self.pixels.clone(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Same image snapped to the 8-bit grid that PNG storage uses.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for p in out.pixels.iter_mut() {
            *p = dequantize(quantize(*p));
        }
        out
    }

    /// Root-mean-square difference over all channels.
    pub fn pixel_distance(&self, other: &ImageBuffer) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch {
                expected: vec![self.height, self.width, 3],
                actual: vec![other.height, other.width, 3],
            });
        }
        let ss: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok((ss / self.pixels.len() as f64).sqrt())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            for (k, v) in &self.metadata {
                enc.add_text_chunk(k.clone(), v.clone()).map_err(codec)?;
            }
            let mut writer = enc.write_header().map_err(codec)?;
            let bytes: Vec<u8> = self.pixels.iter().map(|p| quantize(*p)).collect();
            writer.write_image_data(&bytes).map_err(codec)?;
            writer.finish().map_err(codec)?;
        }
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(codec)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Codec("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(codec)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => {
                return Err(Error::Codec("unexpanded palette image".into()))
            }
        };
        let row = info.line_size;
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            let line = &buf[y * row..y * row + w * channels];
            for px in line.chunks_exact(channels) {
                let rgb = match channels {
                    1 | 2 => [px[0]; 3],
                    _ => [px[0], px[1], px[2]],
                };
                pixels.extend(rgb.iter().map(|b| dequantize(*b)));
            }
        }
        let mut img = Self::new(w, h, pixels)?;
        for chunk in &reader.info().uncompressed_latin1_text {
            img.metadata.insert(chunk.keyword.clone(), chunk.text.clone());
        }
        Ok(img)
    }

    pub fn to_png_b64(&self) -> Result<String> {
        Ok(STANDARD.encode(self.to_png_bytes()?))
    }

    pub fn from_png_b64(s: &str) -> Result<Self> {
        let bytes = STANDARD
            .decode(s)
            .map_err(|e| Error::Codec(format!("base64: {e}")))?;
        Self::from_png_bytes(&bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }
}

fn codec(e: impl std::fmt::Display) -> Error {
    Error::Codec(e.to_string())
}

pub fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> ImageBuffer {
        let px = (0..w * h * 3)
            .map(|i| ((i * 7919) % 1000) as f32 / 999.0)
            .collect();
        ImageBuffer::new(w, h, px).unwrap()
    }

    #[test]
    fn clamps_on_construction() {
        let img = ImageBuffer::new(1, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.5, 1.0]);
        assert!(ImageBuffer::new(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn png_round_trip_is_lossless_after_quantization() {
        let img = gradient(64, 64).with_meta("note", "hello");
        let back = ImageBuffer::from_png_bytes(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back, img.quantized());
        assert_eq!(back.meta("note"), Some("hello"));
        // Second trip is exact.
        let again = ImageBuffer::from_png_b64(&back.to_png_b64().unwrap()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn pixel_distance_basics() {
        let a = gradient(8, 4);
        assert_eq!(a.pixel_distance(&a).unwrap(), 0.0);
        let white = ImageBuffer::new(8, 4, vec![1.0; 96]).unwrap();
        let black = ImageBuffer::new(8, 4, vec![0.0; 96]).unwrap();
        assert_eq!(white.pixel_distance(&black).unwrap(), 1.0);
        assert!(a.pixel_distance(&gradient(4, 8)).is_err());
    }
}
