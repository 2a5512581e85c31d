//! Painter's-algorithm sphere-splat renderer for synthetic oracle objects.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{look_at_basis, Viewpoint};
use crate::imaging::ImageBuffer;
use crate::rng::{Cursor, StreamKey};

/// Camera distance for a unit-radius viewpoint.
pub const CAMERA_DISTANCE: f64 = 4.0;
pub const FIELD_OF_VIEW_DEG: f64 = 40.0;

const MIN_BLOBS: u64 = 24;
const EXTRA_BLOBS: u64 = 9;
const AMBIENT: f32 = 0.3;
const DIFFUSE: f32 = 0.7;
const OBJECT_TAG: u64 = 0x6f62_6a65_6374; // "object"

/// Minimum RMS pixel distance between a view and its azimuth-flipped twin.
pub const ASYMMETRY_MIN_DISTANCE: f64 = 0.05;
const GUARD_SIZE: usize = 48;
const GUARD_ATTEMPTS: u64 = 64;

fn light_dir() -> [f64; 3] {
    let l = [0.35f64, -0.45, 0.82];
    let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
    [l[0] / n, l[1] / n, l[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f32; 3],
}

/// A procedurally generated cloud of shaded spheres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleObject {
    pub seed: u64,
    pub blobs: Vec<Blob>,
}

impl OracleObject {
    /// Deterministic object for `seed`, redrawn until it passes the asymmetry guard.
    pub fn from_seed(seed: u64) -> Self {
        let mut last = None;
        for attempt in 0..GUARD_ATTEMPTS {
            let obj = Self::draw(seed, attempt);
            if obj.is_asymmetric() {
                return obj;
            }
            last = Some(obj);
        }
        log::warn!("object {seed}: no asymmetric draw after {GUARD_ATTEMPTS} attempts");
        last.expect("at least one attempt")
    }

    pub fn from_blobs(seed: u64, blobs: Vec<Blob>) -> Self {
        OracleObject { seed, blobs }
    }

    fn draw(seed: u64, attempt: u64) -> Self {
        let mut cur = Cursor::new(StreamKey::new(seed).derive_all(&[OBJECT_TAG, attempt]));
        let count = MIN_BLOBS + cur.below(EXTRA_BLOBS);
        let blobs = (0..count)
            .map(|_| {
                let center = loop {
                    let p = [cur.range(-1.0, 1.0), cur.range(-1.0, 1.0), cur.range(-1.0, 1.0)];
                    if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
                        break [p[0] * 0.75, p[1] * 0.75, p[2] * 0.75];
                    }
                };
                let radius = cur.range(0.10, 0.28);
                let color = [
                    cur.range(0.05, 0.9) as f32,
                    cur.range(0.05, 0.9) as f32,
                    cur.range(0.05, 0.9) as f32,
                ];
                Blob { center, radius, color }
            })
            .collect();
        OracleObject { seed, blobs }
    }

    /// Every probe view differs from its 180°-azimuth twin by more than
    /// [`ASYMMETRY_MIN_DISTANCE`].
    pub fn is_asymmetric(&self) -> bool {
        for elevation in [0.0, 25.0, 50.0] {
            for k in 0..8 {
                let azimuth = k as f64 * 45.0;
                let a = Viewpoint::unit(elevation, azimuth).expect("valid probe");
                let b = Viewpoint::unit(elevation, azimuth + 180.0).expect("valid probe");
                let (Ok(ia), Ok(ib)) = (self.render(&a, GUARD_SIZE), self.render(&b, GUARD_SIZE))
                else {
                    return false;
                };
                match ia.pixel_distance(&ib) {
                    Ok(d) if d > ASYMMETRY_MIN_DISTANCE => {}
                    _ => return false,
                }
            }
        }
        true
    }

    /// Untagged render; see [`crate::backend::oracle_render`] for the tagged variant.
    pub fn render(&self, v: &Viewpoint, size: usize) -> Result<ImageBuffer> {
        let pixels = self.render_pixels(v, size)?;
        ImageBuffer::new(size, size, pixels)
    }

    pub(crate) fn render_pixels(&self, v: &Viewpoint, size: usize) -> Result<Vec<f32>> {
        let cam = RenderCamera::new(v, size)?;
        let light = light_dir();
        let mut img = vec![1.0f32; size * size * 3];

        let mut splats: Vec<(f64, usize, f64, f64, f64)> = self
            .blobs
            .iter()
            .enumerate()
            .filter_map(|(idx, b)| {
                let (u, vv, depth) = cam.project(b.center)?;
                if depth <= b.radius {
                    return None;
                }
                Some((depth, idx, u, vv, cam.focal_px * b.radius / depth))
            })
            .collect();
        // Far to near; index breaks ties so the order is total.
        splats.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        for (_, idx, cu, cv, r) in splats {
            let blob = &self.blobs[idx];
            let x0 = ((cu - r - 1.0).floor().max(0.0)) as usize;
            let y0 = ((cv - r - 1.0).floor().max(0.0)) as usize;
            let x1 = ((cu + r + 1.0).ceil().min(size as f64)) as usize;
            let y1 = ((cv + r + 1.0).ceil().min(size as f64)) as usize;
            for py in y0..y1 {
                for px in x0..x1 {
                    let dx = px as f64 + 0.5 - cu;
                    let dy = py as f64 + 0.5 - cv;
                    let dist = (dx * dx + dy * dy).sqrt();
                    let coverage = (r - dist + 0.5).clamp(0.0, 1.0) as f32;
                    if coverage <= 0.0 {
                        continue;
                    }
                    // Sphere normal in camera axes (right, up, toward camera).
                    let nx = (dx / r).clamp(-1.0, 1.0);
                    let ny = (-dy / r).clamp(-1.0, 1.0);
                    let nz = (1.0 - (nx * nx + ny * ny).min(1.0)).sqrt();
                    let world = [
                        nx * cam.right[0] + ny * cam.up[0] - nz * cam.forward[0],
                        nx * cam.right[1] + ny * cam.up[1] - nz * cam.forward[1],
                        nx * cam.right[2] + ny * cam.up[2] - nz * cam.forward[2],
                    ];
                    let lambert =
                        (world[0] * light[0] + world[1] * light[1] + world[2] * light[2]).max(0.0);
                    let shade = AMBIENT + DIFFUSE * lambert as f32;
                    let base = (py * size + px) * 3;
                    for c in 0..3 {
                        let p = &mut img[base + c];
                        *p = *p * (1.0 - coverage) + blob.color[c] * shade * coverage;
                    }
                }
            }
        }
        Ok(img)
    }
}

/// Pinhole camera derived from a viewpoint's look-at basis.
#[derive(Debug, Clone, Copy)]
pub struct RenderCamera {
    pub position: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub forward: [f64; 3],
    pub focal_px: f64,
    pub center_px: f64,
}

impl RenderCamera {
    pub fn new(v: &Viewpoint, size: usize) -> Result<Self> {
        let (right, up, forward) = look_at_basis(v)?;
        let d = v.direction();
        let dist = CAMERA_DISTANCE * v.radius();
        let half = size as f64 / 2.0;
        Ok(RenderCamera {
            position: [d[0] * dist, d[1] * dist, d[2] * dist],
            right,
            up,
            forward,
            focal_px: half / (FIELD_OF_VIEW_DEG.to_radians() / 2.0).tan(),
            center_px: half,
        })
    }

    /// Pixel coordinates `(u, v)` and depth of a world point, if in front.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let d = [
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ];
        let x = d[0] * self.right[0] + d[1] * self.right[1] + d[2] * self.right[2];
        let y = d[0] * self.up[0] + d[1] * self.up[1] + d[2] * self.up[2];
        let z = d[0] * self.forward[0] + d[1] * self.forward[1] + d[2] * self.forward[2];
        if z <= 1e-9 {
            return None;
        }
        Some((
            self.center_px + self.focal_px * x / z,
            self.center_px - self.focal_px * y / z,
            z,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objects_are_deterministic_and_large_enough() {
        let a = OracleObject::from_seed(11);
        let b = OracleObject::from_seed(11);
        assert_eq!(a, b);
        assert!(a.blobs.len() >= 20);
        for blob in &a.blobs {
            let c = blob.center;
            assert!((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() < 1.0);
        }
        assert_ne!(a, OracleObject::from_seed(12));
    }

    #[test]
    fn render_is_deterministic() {
        let obj = OracleObject::from_seed(3);
        let v = Viewpoint::unit(20.0, 75.0).unwrap();
        assert_eq!(obj.render(&v, 64).unwrap(), obj.render(&v, 64).unwrap());
    }

    #[test]
    fn flipped_views_differ() {
        for seed in 0..5u64 {
            let obj = OracleObject::from_seed(seed);
            for (e, a) in [(10.0, 33.0), (40.0, 200.0), (65.0, 310.0)] {
                let v = Viewpoint::unit(e, a).unwrap();
                let w = Viewpoint::unit(e, a + 180.0).unwrap();
                let d = obj
                    .render(&v, 64)
                    .unwrap()
                    .pixel_distance(&obj.render(&w, 64).unwrap())
                    .unwrap();
                assert!(d > ASYMMETRY_MIN_DISTANCE, "seed {seed}: {d}");
            }
        }
    }

    #[test]
    fn pinhole_projection_of_a_single_blob() {
        // Camera at (4, 0, 0) looking down -x: right = +y, up = +z, depth 4.
        let blob = Blob {
            center: [0.0, 0.2, 0.1],
            radius: 0.15,
            color: [0.0, 0.0, 0.0],
        };
        let obj = OracleObject::from_blobs(0, vec![blob]);
        let img = obj.render(&Viewpoint::unit(0.0, 0.0).unwrap(), 64).unwrap();
        let f = 32.0 / 20f64.to_radians().tan();
        let (eu, ev) = (32.0 + f * 0.2 / 4.0, 32.0 - f * 0.1 / 4.0);
        let (mut sw, mut su, mut sv) = (0.0, 0.0, 0.0);
        for y in 0..64 {
            for x in 0..64 {
                let w = 1.0 - img.pixels()[(y * 64 + x) * 3] as f64;
                sw += w;
                su += w * (x as f64 + 0.5);
                sv += w * (y as f64 + 0.5);
            }
        }
        let (cu, cv) = (su / sw, sv / sw);
        assert!((cu - eu).abs() < 1.0 && (cv - ev).abs() < 1.0, "({cu}, {cv}) vs ({eu}, {ev})");
    }

    #[test]
    fn pole_views_are_rejected() {
        let obj = OracleObject::from_seed(1);
        assert!(obj.render(&Viewpoint::unit(90.0, 0.0).unwrap(), 32).is_err());
    }
}
