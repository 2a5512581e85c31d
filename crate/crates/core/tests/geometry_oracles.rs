use posematch::geometry::{
    fibonacci_hemisphere, relative_change, rotation_error_deg, viewpoint_error_deg, viewpoint_to_rotation,
};
use posematch::{RotationMatrix, Viewpoint};
use proptest::prelude::*;

// Rows (right, up, back) of a camera at elevation 30, azimuth 120, from a
// numpy cross-product construction.
const LOOK_AT_30_120: [[f64; 3]; 3] = [
    [-0.8660254037844387, -0.49999999999999983, 0.0],
    [0.2499999999999999, -0.4330127018922193, 0.8660254037844386],
    [-0.4330127018922192, 0.7500000000000001, 0.49999999999999994],
];

#[test]
fn look_at_matches_reference_construction() {
    let r = viewpoint_to_rotation(&Viewpoint::unit(30.0, 120.0).unwrap()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((r.0[i][j] - LOOK_AT_30_120[i][j]).abs() < 1e-12, "entry ({i},{j})");
        }
    }
    assert!((r.determinant() - 1.0).abs() < 1e-9);
}

fn quat_to_matrix(q: [f64; 4]) -> RotationMatrix {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    RotationMatrix([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

fn quat_angle_deg(a: [f64; 4], b: [f64; 4]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    2.0 * dot.abs().min(1.0).acos().to_degrees()
}

/// Shepperd's method.
fn matrix_to_quat(r: &RotationMatrix) -> [f64; 4] {
    let m = r.0;
    let tr = m[0][0] + m[1][1] + m[2][2];
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
    }
}

fn quat() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0).prop_filter("non-degenerate", |q| {
        q.iter().map(|x| x * x).sum::<f64>() > 0.05
    })
}

proptest! {
    #[test]
    fn error_matches_quaternion_angle(a in quat(), b in quat()) {
        let got = rotation_error_deg(&quat_to_matrix(a), &quat_to_matrix(b)).unwrap();
        prop_assert!((got - quat_angle_deg(a, b)).abs() < 1e-6, "{got} vs {}", quat_angle_deg(a, b));
    }

    #[test]
    fn viewpoint_error_matches_quaternion_angle(
        e1 in -80.0f64..80.0, a1 in 0.0f64..360.0, e2 in -80.0f64..80.0, a2 in 0.0f64..360.0,
    ) {
        let v1 = Viewpoint::unit(e1, a1).unwrap();
        let v2 = Viewpoint::unit(e2, a2).unwrap();
        let q1 = matrix_to_quat(&viewpoint_to_rotation(&v1).unwrap());
        let q2 = matrix_to_quat(&viewpoint_to_rotation(&v2).unwrap());
        let got = viewpoint_error_deg(&v1, &v2).unwrap();
        prop_assert!((got - quat_angle_deg(q1, q2)).abs() < 1e-6);
    }

    #[test]
    fn change_then_displace_round_trips(
        e1 in -80.0f64..80.0, a1 in 0.0f64..360.0, e2 in -80.0f64..80.0, a2 in 0.0f64..360.0,
    ) {
        let v1 = Viewpoint::unit(e1, a1).unwrap();
        let v2 = Viewpoint::unit(e2, a2).unwrap();
        let back = v1.displaced(&relative_change(&v1, &v2)).unwrap();
        prop_assert!((back.elevation_deg() - e2).abs() < 1e-9);
        let da = (back.azimuth_deg() - v2.azimuth_deg()).abs();
        prop_assert!(da < 1e-9 || (360.0 - da) < 1e-9);
    }
}

#[test]
fn identity_and_antipodal_are_exact() {
    for (e, a) in [(0.0, 0.0), (30.0, 137.0), (-45.0, 300.0), (80.0, 10.0)] {
        let r = viewpoint_to_rotation(&Viewpoint::unit(e, a).unwrap()).unwrap();
        assert_eq!(rotation_error_deg(&r, &r).unwrap(), 0.0);
    }
    // Composing with an exact half turn about the world vertical.
    let flip = RotationMatrix([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]);
    for a in [0.0, 45.0, 137.0, 270.0] {
        let r = viewpoint_to_rotation(&Viewpoint::unit(0.0, a).unwrap()).unwrap();
        assert_eq!(rotation_error_deg(&r, &r.mul(&flip)).unwrap(), 180.0);
        let opposite = viewpoint_to_rotation(&Viewpoint::unit(0.0, a + 180.0).unwrap()).unwrap();
        assert!((rotation_error_deg(&r, &opposite).unwrap() - 180.0).abs() < 1e-9);
    }
}

#[test]
fn fibonacci_output_is_bit_stable() {
    let a = fibonacci_hemisphere(64).unwrap();
    let b = fibonacci_hemisphere(64).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.elevation_deg().to_bits(), y.elevation_deg().to_bits());
        assert_eq!(x.azimuth_deg().to_bits(), y.azimuth_deg().to_bits());
    }
    let expected: Vec<f64> = [0.125f64, 0.375, 0.625, 0.875].iter().map(|z| z.asin().to_degrees()).collect();
    let got: Vec<f64> = fibonacci_hemisphere(4).unwrap().iter().map(|v| v.elevation_deg()).collect();
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12);
    }
}
