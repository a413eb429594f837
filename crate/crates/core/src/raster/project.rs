use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::Camera;
use crate::error::{Error, Result};
use crate::fusion::GlobalGaussians;
use crate::quat;

/// Camera-space depths at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic screen-space dilation added to every 2D covariance, in px².
pub const LOW_PASS: f64 = 0.3;

/// A projected Gaussian together with the intermediate quantities the
/// backward pass reuses.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub index: usize,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Inverse of `cov`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Half extents of the 3σ bounding box in pixels.
    pub extent: [f64; 2],
    /// Camera-space mean.
    pub(crate) t: Vector3<f64>,
    pub(crate) jacobian: Matrix2x3<f64>,
    /// Camera-space 3D covariance.
    pub(crate) cov_cam: Matrix3<f64>,
    /// `R(r) diag(s)`.
    pub(crate) m: Matrix3<f64>,
    pub(crate) rot: Matrix3<f64>,
    pub(crate) scale: Vector3<f64>,
    pub(crate) quat: quat::Quat,
}

pub(crate) fn perspective_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (t.x, t.y, t.z);
    Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * y / (z * z),
    )
}

/// Projects every Gaussian in front of the near plane.
pub fn project(gaussians: &GlobalGaussians, camera: &Camera) -> Result<Vec<Splat2D>> {
    let projected: Vec<Result<Option<Splat2D>>> = (0..gaussians.len())
        .into_par_iter()
        .map(|i| project_one(gaussians, camera, i))
        .collect();
    let mut out = Vec::with_capacity(projected.len());
    for p in projected {
        if let Some(s) = p? {
            out.push(s);
        }
    }
    Ok(out)
}

fn project_one(g: &GlobalGaussians, camera: &Camera, i: usize) -> Result<Option<Splat2D>> {
    let t = camera.to_camera(&g.mu[i]);
    if !(t.z > NEAR_PLANE) {
        return Ok(None);
    }
    let rot = quat::to_rotation(&g.rot[i]);
    let m = rot * Matrix3::from_diagonal(&g.scale[i]);
    let cov_world = m * m.transpose();
    let cov_cam = camera.rotation * cov_world * camera.rotation.transpose();
    let jacobian = perspective_jacobian(camera, &t);
    let cov = jacobian * cov_cam * jacobian.transpose() + Matrix2::identity() * LOW_PASS;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::SingularCovariance(i));
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let mean = Vector2::new(camera.fx * t.x / t.z + camera.cx, camera.fy * t.y / t.z + camera.cy);
    let r = super::CUTOFF_SQ.sqrt();
    Ok(Some(Splat2D {
        index: i,
        mean,
        cov,
        conic,
        depth: t.z,
        color: g.color[i],
        opacity: g.opacity[i],
        extent: [r * cov[(0, 0)].sqrt(), r * cov[(1, 1)].sqrt()],
        t,
        jacobian,
        cov_cam,
        m,
        rot,
        scale: g.scale[i],
        quat: g.rot[i],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::GlobalGaussians;

    fn axis_camera(f: f64) -> Camera {
        Camera {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            fx: f,
            fy: 1.5 * f,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        }
    }

    fn single(mu: Vector3<f64>, sigma: f64) -> GlobalGaussians {
        GlobalGaussians {
            color: vec![[1.0, 0.0, 0.0]],
            opacity: vec![0.5],
            mu: vec![mu],
            scale: vec![Vector3::repeat(sigma)],
            rot: vec![quat::IDENTITY],
        }
    }

    #[test]
    fn isotropic_on_axis_closed_form() {
        let (z, sigma, f) = (4.0, 0.2, 50.0);
        let splats = project(&single(Vector3::new(0.0, 0.0, z), sigma), &axis_camera(f)).unwrap();
        let s = &splats[0];
        let ex = (f * sigma / z).powi(2) + LOW_PASS;
        let ey = (1.5 * f * sigma / z).powi(2) + LOW_PASS;
        assert!((s.cov[(0, 0)] - ex).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - ey).abs() < 1e-12);
        assert!(s.cov[(0, 1)].abs() < 1e-15);
        assert_eq!(s.mean, Vector2::new(16.0, 16.0));
    }

    #[test]
    fn behind_camera_is_culled() {
        let splats = project(&single(Vector3::new(0.0, 0.0, -1.0), 0.2), &axis_camera(50.0)).unwrap();
        assert!(splats.is_empty());
        let near = project(&single(Vector3::new(0.0, 0.0, NEAR_PLANE), 0.2), &axis_camera(50.0)).unwrap();
        assert!(near.is_empty());
    }

    #[test]
    fn doubling_focal_doubles_extent() {
        let mut g = single(Vector3::new(0.3, -0.2, 3.0), 0.1);
        g.scale[0] = Vector3::new(0.1, 0.3, 0.05);
        g.rot[0] = quat::normalize(&[0.9, 0.2, -0.3, 0.1]);
        let a = &project(&g, &axis_camera(40.0)).unwrap()[0];
        let b = &project(&g, &axis_camera(80.0)).unwrap()[0];
        let pre = |s: &Splat2D| (s.cov[(0, 0)] - LOW_PASS).sqrt();
        assert!((pre(b) - 2.0 * pre(a)).abs() < 1e-12);
    }
}
