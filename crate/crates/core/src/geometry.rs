//! Object-centric camera viewpoints, look-at rotations and the geodesic
//! rotation metric.
//!
//! The world frame is z-up (gravity along -z). Azimuth is measured from +x
//! toward +y, elevation from the xy-plane toward +z. All angles are stored in
//! degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cameras closer than this to a pole have no well-defined gravity-aligned basis.
pub const POLE_EPS_DEG: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Wraps an angle into `[0, 360)`.
pub fn wrap_360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid rounds tiny negative inputs up to exactly 360.
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `(-180, 180]`.
pub fn wrap_180(deg: f64) -> f64 {
    let w = wrap_360(deg);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// A camera on the sphere around the object, looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    elevation_deg: f64,
    azimuth_deg: f64,
    radius: f64,
}

impl Viewpoint {
    pub fn new(elevation_deg: f64, azimuth_deg: f64, radius: f64) -> Result<Self> {
        if !elevation_deg.is_finite() || !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::InvalidViewpoint(format!(
                "elevation {elevation_deg} outside [-90, 90]"
            )));
        }
        if !azimuth_deg.is_finite() {
            return Err(Error::InvalidViewpoint(format!("azimuth {azimuth_deg}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidViewpoint(format!("radius {radius} must be positive")));
        }
        Ok(Viewpoint {
            elevation_deg,
            azimuth_deg: wrap_360(azimuth_deg),
            radius,
        })
    }

    /// Unit-radius viewpoint.
    pub fn unit(elevation_deg: f64, azimuth_deg: f64) -> Result<Self> {
        Self::new(elevation_deg, azimuth_deg, 1.0)
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.elevation_deg, self.azimuth_deg, radius)
    }

    /// Unit vector from the origin toward the camera.
    pub fn direction(&self) -> [f64; 3] {
        let (st, ct) = self.elevation_deg.to_radians().sin_cos();
        let (sp, cp) = self.azimuth_deg.to_radians().sin_cos();
        [ct * cp, ct * sp, st]
    }

    /// Camera position in world coordinates.
    pub fn position(&self) -> [f64; 3] {
        let d = self.direction();
        [d[0] * self.radius, d[1] * self.radius, d[2] * self.radius]
    }

    /// Componentwise application of a change, with canonical azimuth.
    ///
    /// Elevations that leave `[-90, 90]` continue over the pole: the camera
    /// ends up on the far meridian (`azimuth + 180`).
    pub fn displaced(&self, change: &ViewChange) -> Result<Self> {
        let mut elevation = self.elevation_deg + change.d_elevation_deg;
        let mut azimuth = self.azimuth_deg + change.d_azimuth_deg;
        if !elevation.is_finite() {
            return Err(Error::InvalidViewpoint(format!("elevation {elevation}")));
        }
        // Fold into [-180, 180) first, then reflect across the poles.
        elevation = wrap_180(elevation);
        if elevation > 90.0 {
            elevation = 180.0 - elevation;
            azimuth += 180.0;
        } else if elevation < -90.0 {
            elevation = -180.0 - elevation;
            azimuth += 180.0;
        }
        Self::new(elevation, azimuth, self.radius + change.d_radius)
    }

    /// Great-circle angle between the two camera directions, in degrees.
    pub fn angle_to(&self, other: &Viewpoint) -> f64 {
        let a = self.direction();
        let b = other.direction();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos).to_degrees()
    }
}

/// Signed difference between two viewpoints, used as generator conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewChange {
    pub d_elevation_deg: f64,
    /// Canonical range `(-180, 180]`.
    pub d_azimuth_deg: f64,
    pub d_radius: f64,
}

impl ViewChange {
    pub fn new(d_elevation_deg: f64, d_azimuth_deg: f64, d_radius: f64) -> Self {
        ViewChange {
            d_elevation_deg,
            d_azimuth_deg: wrap_180(d_azimuth_deg),
            d_radius,
        }
    }

    /// Same change with the radius component dropped.
    pub fn angular(self) -> Self {
        ViewChange { d_radius: 0.0, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.d_elevation_deg == 0.0 && self.d_azimuth_deg == 0.0 && self.d_radius == 0.0
    }
}

/// Change that takes `src` to `dst`.
pub fn relative_change(src: &Viewpoint, dst: &Viewpoint) -> ViewChange {
    ViewChange::new(
        dst.elevation_deg - src.elevation_deg,
        dst.azimuth_deg - src.azimuth_deg,
        dst.radius - src.radius,
    )
}

/// Row-major 3x3 rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix =
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn row(&self, i: usize) -> [f64; 3] {
        self.0[i]
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = &self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        RotationMatrix(out)
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest deviation of `RᵀR` from identity, combined with `|det - 1|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let rtr = self.transpose().mul(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr.0[i][j] - target).abs());
            }
        }
        worst.max((self.determinant() - 1.0).abs())
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Camera basis vectors `(right, up, forward)` in world coordinates.
pub fn look_at_basis(v: &Viewpoint) -> Result<([f64; 3], [f64; 3], [f64; 3])> {
    if v.elevation_deg.abs() >= 90.0 - POLE_EPS_DEG {
        return Err(Error::PoleDegenerate(v.elevation_deg));
    }
    let d = v.direction();
    let forward = [-d[0], -d[1], -d[2]];
    let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
    let up = cross(right, forward);
    Ok((right, up, forward))
}

/// World-to-camera rotation with rows `(right, up, -forward)`.
pub fn viewpoint_to_rotation(v: &Viewpoint) -> Result<RotationMatrix> {
    let (right, up, forward) = look_at_basis(v)?;
    Ok(RotationMatrix([
        right,
        up,
        [-forward[0], -forward[1], -forward[2]],
    ]))
}

/// Geodesic angle of `R_gtᵀ R_pr`, in degrees.
pub fn rotation_error_deg(r_gt: &RotationMatrix, r_pr: &RotationMatrix) -> Result<f64> {
    for r in [r_gt, r_pr] {
        let res = r.orthonormality_residual();
        if !(res <= ORTHONORMAL_TOL) {
            return Err(Error::NonRotationInput(res));
        }
    }
    let m = r_gt.transpose().mul(r_pr).0;
    // Angle from the unit quaternion of the relative rotation, extracted on
    // the largest-diagonal branch; stays exact at both 0° and 180°.
    let tr = m[0][0] + m[1][1] + m[2][2];
    let (w, v) = if tr > 0.0 {
        let s = 2.0 * (1.0 + tr).sqrt();
        (0.25 * s, [(m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s])
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = 2.0 * (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt();
        ((m[2][1] - m[1][2]) / s, [0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s])
    } else if m[1][1] > m[2][2] {
        let s = 2.0 * (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt();
        ((m[0][2] - m[2][0]) / s, [(m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s])
    } else {
        let s = 2.0 * (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt();
        ((m[1][0] - m[0][1]) / s, [(m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s])
    };
    let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    Ok((2.0 * vn.atan2(w.abs())).to_degrees())
}

/// Rotation error between two viewpoints' look-at cameras.
pub fn viewpoint_error_deg(gt: &Viewpoint, pr: &Viewpoint) -> Result<f64> {
    rotation_error_deg(&viewpoint_to_rotation(gt)?, &viewpoint_to_rotation(pr)?)
}

/// `n` viewpoints spread evenly over the upper hemisphere.
///
/// Heights are stratified, `z_i = (i + 0.5) / n`, and azimuths advance by the
/// golden angle `360 / φ²`.
pub fn fibonacci_hemisphere(n: usize) -> Result<Vec<Viewpoint>> {
    if n == 0 {
        return Err(Error::InvalidCount);
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let step = 360.0 / (golden * golden);
    (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            Viewpoint::unit(z.asin().to_degrees(), (i as f64 * step) % 360.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vp(e: f64, a: f64) -> Viewpoint {
        Viewpoint::unit(e, a).unwrap()
    }

    #[test]
    fn zero_elevation_look_at() {
        let (right, up, forward) = look_at_basis(&vp(0.0, 0.0)).unwrap();
        assert_eq!(forward, [-1.0, -0.0, -0.0]);
        assert!((up[2] - 1.0).abs() < 1e-15 && up[0].abs() < 1e-15 && up[1].abs() < 1e-15);
        assert!((right[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quarter_turn_azimuth() {
        let err = viewpoint_error_deg(&vp(0.0, 0.0), &vp(0.0, 90.0)).unwrap();
        assert!((err - 90.0).abs() < 1e-9);
    }

    #[test]
    fn identity_and_antipodal() {
        let r = viewpoint_to_rotation(&vp(0.0, 10.0)).unwrap();
        assert_eq!(rotation_error_deg(&r, &r).unwrap(), 0.0);
        let flipped = viewpoint_to_rotation(&vp(0.0, 190.0)).unwrap();
        assert_eq!(rotation_error_deg(&r, &flipped).unwrap(), 180.0);
    }

    #[test]
    fn pole_is_rejected() {
        assert!(matches!(
            viewpoint_to_rotation(&vp(90.0, 0.0)),
            Err(Error::PoleDegenerate(_))
        ));
        assert!(matches!(
            viewpoint_to_rotation(&vp(-90.0, 0.0)),
            Err(Error::PoleDegenerate(_))
        ));
        assert!(viewpoint_to_rotation(&vp(89.9, 0.0)).is_ok());
    }

    #[test]
    fn non_rotation_rejected() {
        let mut m = RotationMatrix::IDENTITY;
        m.0[0][0] = 1.1;
        assert!(matches!(
            rotation_error_deg(&m, &RotationMatrix::IDENTITY),
            Err(Error::NonRotationInput(_))
        ));
        // A reflection is orthogonal but has det -1.
        let mut refl = RotationMatrix::IDENTITY;
        refl.0[2][2] = -1.0;
        assert!(rotation_error_deg(&refl, &RotationMatrix::IDENTITY).is_err());
    }

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_change(&vp(20.0, 100.0), &vp(20.0, 100.0)), ViewChange::default());
        let c = relative_change(&vp(0.0, 350.0), &vp(0.0, 10.0));
        assert!((c.d_azimuth_deg - 20.0).abs() < 1e-12);
        let c = relative_change(&vp(20.0, 100.0), &vp(45.0, 300.0));
        assert_eq!(c.d_elevation_deg, 25.0);
        assert_eq!(c.d_azimuth_deg, -160.0);
        assert_eq!(c.d_radius, 0.0);
    }

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_180(180.0), 180.0);
        assert_eq!(wrap_180(-180.0), 180.0);
        assert_eq!(wrap_360(-1e-18), 0.0);
        assert_eq!(wrap_360(720.0), 0.0);
    }

    #[test]
    fn displaced_over_the_pole() {
        let v = vp(80.0, 10.0).displaced(&ViewChange::new(20.0, 0.0, 0.0)).unwrap();
        assert!((v.elevation_deg() - 80.0).abs() < 1e-12);
        assert!((v.azimuth_deg() - 190.0).abs() < 1e-12);
        let v = vp(-80.0, 10.0).displaced(&ViewChange::new(-30.0, 0.0, 0.0)).unwrap();
        assert!((v.elevation_deg() + 70.0).abs() < 1e-12);
    }

    #[test]
    fn fibonacci_small_cases() {
        assert!(matches!(fibonacci_hemisphere(0), Err(Error::InvalidCount)));
        let one = fibonacci_hemisphere(1).unwrap();
        assert!((one[0].elevation_deg() - 30.0).abs() < 1e-12);
        let four = fibonacci_hemisphere(4).unwrap();
        for (v, z) in four.iter().zip([0.125f64, 0.375, 0.625, 0.875]) {
            assert_eq!(v.elevation_deg(), z.asin().to_degrees());
        }
    }

    #[test]
    fn fibonacci_64_spacing() {
        // All-pairs brute force over the unit directions.
        let pts = fibonacci_hemisphere(64).unwrap();
        let mut min_angle = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let a = pts[i].direction();
                let b = pts[j].direction();
                let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
                min_angle = min_angle.min(dot.acos().to_degrees());
            }
        }
        assert!(min_angle >= 12.0, "min spacing {min_angle}");
        for v in &pts {
            assert!(v.elevation_deg() > 0.0 && v.elevation_deg() < 90.0);
            assert!((0.0..360.0).contains(&v.azimuth_deg()));
        }
        let again = fibonacci_hemisphere(64).unwrap();
        assert_eq!(pts, again);
    }

    fn arb_vp() -> impl Strategy<Value = Viewpoint> {
        (-89.0f64..89.0, -720.0f64..720.0).prop_map(|(e, a)| vp(e, a))
    }

    proptest! {
        #[test]
        fn self_error_is_zero(v in arb_vp()) {
            let r = viewpoint_to_rotation(&v).unwrap();
            prop_assert_eq!(rotation_error_deg(&r, &r).unwrap(), 0.0);
        }

        #[test]
        fn rotations_are_orthonormal(v in arb_vp()) {
            let r = viewpoint_to_rotation(&v).unwrap();
            prop_assert!(r.orthonormality_residual() < 1e-9);
        }

        #[test]
        fn error_is_symmetric(a in arb_vp(), b in arb_vp()) {
            let ab = viewpoint_error_deg(&a, &b).unwrap();
            let ba = viewpoint_error_deg(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
        }

        #[test]
        fn zero_elevation_error_is_azimuth_gap(a in -720.0f64..720.0, b in -720.0f64..720.0) {
            let err = viewpoint_error_deg(&vp(0.0, a), &vp(0.0, b)).unwrap();
            let gap = wrap_180(b - a).abs();
            prop_assert!((err - gap).abs() < 1e-6, "{} vs {}", err, gap);
        }

        #[test]
        fn change_round_trips(a in arb_vp(), b in arb_vp()) {
            let back = a.displaced(&relative_change(&a, &b)).unwrap();
            prop_assert!((back.elevation_deg() - b.elevation_deg()).abs() < 1e-9);
            prop_assert!(wrap_180(back.azimuth_deg() - b.azimuth_deg()).abs() < 1e-9);
            prop_assert!((back.radius() - b.radius()).abs() < 1e-12);
        }

        #[test]
        fn change_azimuth_is_canonical(a in arb_vp(), b in arb_vp()) {
            let c = relative_change(&a, &b);
            prop_assert!(c.d_azimuth_deg > -180.0 && c.d_azimuth_deg <= 180.0);
        }
    }
}
