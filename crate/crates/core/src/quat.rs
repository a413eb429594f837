//! Quaternion helpers in `(w, x, y, z)` order, with the adjoints the
//! binding and projection backward passes need.

use nalgebra::{Matrix3, Matrix4};

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

/// Hamilton product `a ⊗ b`.
pub fn mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Matrix `L(a)` with `a ⊗ b = L(a) b`.
pub fn left_matrix(a: &Quat) -> Matrix4<f64> {
    let [w, x, y, z] = *a;
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

pub fn norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize(q: &Quat) -> Quat {
    let n = norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Adjoint of `normalize` at `v`: maps the gradient w.r.t. `v/|v|` to the
/// gradient w.r.t. `v`.
pub fn normalize_backward(v: &Quat, d_out: &Quat) -> Quat {
    let n = norm(v);
    let u = [v[0] / n, v[1] / n, v[2] / n, v[3] / n];
    let proj = u[0] * d_out[0] + u[1] * d_out[1] + u[2] * d_out[2] + u[3] * d_out[3];
    [
        (d_out[0] - u[0] * proj) / n,
        (d_out[1] - u[1] * proj) / n,
        (d_out[2] - u[2] * proj) / n,
        (d_out[3] - u[3] * proj) / n,
    ]
}

/// Rotation matrix of a unit quaternion. The input is not renormalized, so
/// the result is only orthonormal for unit input.
pub fn to_rotation(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Adjoint of [`to_rotation`]: `g` holds dL/dR entrywise.
pub fn to_rotation_backward(q: &Quat, g: &Matrix3<f64>) -> Quat {
    let [w, x, y, z] = *q;
    let g = |r: usize, c: usize| g[(r, c)];
    let dw = 2.0
        * (z * (g(1, 0) - g(0, 1)) + y * (g(0, 2) - g(2, 0)) + x * (g(2, 1) - g(1, 2)));
    let dx = 2.0 * (y * (g(0, 1) + g(1, 0)) + z * (g(0, 2) + g(2, 0)) + w * (g(2, 1) - g(1, 2)))
        - 4.0 * x * (g(1, 1) + g(2, 2));
    let dy = 2.0 * (x * (g(0, 1) + g(1, 0)) + w * (g(0, 2) - g(2, 0)) + z * (g(1, 2) + g(2, 1)))
        - 4.0 * y * (g(0, 0) + g(2, 2));
    let dz = 2.0 * (w * (g(1, 0) - g(0, 1)) + x * (g(0, 2) + g(2, 0)) + y * (g(1, 2) + g(2, 1)))
        - 4.0 * z * (g(0, 0) + g(1, 1));
    [dw, dx, dy, dz]
}

/// Quaternion of a proper rotation matrix (Shepperd's method), sign fixed so
/// that `w >= 0`.
pub fn from_rotation(m: &Matrix3<f64>) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = normalize(&q);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// Rotation about a unit `axis` by `angle` radians.
pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quat {
    let (s, c) = (0.5 * angle).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

/// True when `a` and `b` describe the same rotation (q and -q are identified).
pub fn same_rotation(a: &Quat, b: &Quat, tol: f64) -> bool {
    let direct = (0..4).all(|i| (a[i] - b[i]).abs() <= tol);
    let flipped = (0..4).all(|i| (a[i] + b[i]).abs() <= tol);
    direct || flipped
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_quat(seed: u64) -> Quat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        normalize(&[
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ])
    }

    #[test]
    fn rotation_round_trip() {
        for seed in 0..50 {
            let q = random_quat(seed);
            let back = from_rotation(&to_rotation(&q));
            assert!(same_rotation(&q, &back, 1e-12), "{q:?} vs {back:?}");
        }
    }

    #[test]
    fn product_matches_matrix_composition() {
        let a = random_quat(1);
        let b = random_quat(2);
        let lhs = to_rotation(&mul(&a, &b));
        let rhs = to_rotation(&a) * to_rotation(&b);
        assert!((lhs - rhs).abs().max() < 1e-12);
        let via_matrix = left_matrix(&a) * nalgebra::Vector4::from(b);
        let direct = mul(&a, &b);
        for i in 0..4 {
            assert!((via_matrix[i] - direct[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_adjoint_matches_finite_differences() {
        let q = [0.7, -0.2, 0.4, 0.1];
        let g = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.9, -0.4, 0.1, 0.7, -0.6);
        let analytic = to_rotation_backward(&q, &g);
        let h = 1e-6;
        for i in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fp = to_rotation(&qp).component_mul(&g).sum();
            let fm = to_rotation(&qm).component_mul(&g).sum();
            let numeric = (fp - fm) / (2.0 * h);
            assert!((numeric - analytic[i]).abs() < 1e-8, "component {i}");
        }
    }

    #[test]
    fn normalize_adjoint_matches_finite_differences() {
        let v = [1.3, -0.2, 0.5, 0.25];
        let d = [0.4, 1.0, -0.3, 0.8];
        let analytic = normalize_backward(&v, &d);
        let h = 1e-6;
        for i in 0..4 {
            let mut vp = v;
            let mut vm = v;
            vp[i] += h;
            vm[i] -= h;
            let f = |q: &Quat| {
                let n = normalize(q);
                (0..4).map(|k| n[k] * d[k]).sum::<f64>()
            };
            let numeric = (f(&vp) - f(&vm)) / (2.0 * h);
            assert!((numeric - analytic[i]).abs() < 1e-9);
        }
    }
}
