//! CPU Gaussian splatting: EWA projection, tiled front-to-back compositing
//! and the analytic backward pass.
//!
//! Camera space has x right, y down, z forward. Pixel `(px, py)` has its
//! center at `(px + 0.5, py + 0.5)`.

mod backward;
mod composite;
mod project;

use std::path::Path;

use image::ImageEncoder;
use nalgebra::{Matrix3, Vector3};

use crate::error::{check_len, Error, Result};
use crate::io::write_atomic;

pub use backward::render_backward;
pub use composite::{composite, Contribution, RenderGraph, DEFAULT_TILE};
pub use project::{project, Splat2D, LOW_PASS, NEAR_PLANE};

/// Largest per-splat alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Squared Mahalanobis radius beyond which a splat does not touch a pixel.
pub const CUTOFF_SQ: f64 = 9.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Pinhole camera at `eye` looking at `target`, principal point at the
    /// image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            rotation,
            translation: -(rotation * eye),
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera image size must be nonzero".into()));
        }
        let r = &self.rotation;
        if (r * r.transpose() - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Flat layout: rotation (row-major, 9), translation (3), fx, fy, cx, cy,
    /// width, height.
    pub fn to_array(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        out[9..12].copy_from_slice(self.translation.as_slice());
        out[12] = self.fx;
        out[13] = self.fy;
        out[14] = self.cx;
        out[15] = self.cy;
        out[16] = self.width as f64;
        out[17] = self.height as f64;
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        check_len("camera record", 18, v.len())?;
        let cam = Camera {
            rotation: Matrix3::from_row_slice(&v[..9]),
            translation: Vector3::new(v[9], v[10], v[11]),
            fx: v[12],
            fy: v[13],
            cx: v[14],
            cy: v[15],
            width: v[16] as usize,
            height: v[17] as usize,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Linear RGB image, row-major `[y][x][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len("image data", width * height * 3, data.len())?;
        Ok(Image { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.width == other.width && self.height == other.height && self.data.len() == other.data.len() {
            Ok(())
        } else {
            Err(Error::Resolution {
                expected_w: self.width,
                expected_h: self.height,
                expected_c: 3,
                w: other.width,
                h: other.height,
                c: 3,
            })
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let png = encode_png(self.width as u32, self.height as u32, &self.to_rgb8())?;
        write_atomic(path, &png)
    }
}

/// Encodes 8-bit RGB pixels as PNG bytes.
pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(rgb, width, height, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

/// Projects and composites with the default tile size.
pub fn render(
    gaussians: &crate::fusion::GlobalGaussians,
    camera: &Camera,
    background: [f64; 3],
) -> Result<(Image, RenderGraph)> {
    let splats = project(gaussians, camera)?;
    let (image, mut graph) = composite(splats, camera, background, DEFAULT_TILE)?;
    graph.num_gaussians = gaussians.len();
    Ok((image, graph))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_axes() {
        let cam = Camera::look_at(
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            80.0,
            64,
            64,
        );
        cam.validate().unwrap();
        // World origin sits 3 units in front; world +y is image up (camera -y).
        assert!((cam.to_camera(&Vector3::zeros()) - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-15);
        let up = cam.rotation * Vector3::new(0.0, 1.0, 0.0);
        assert!((up - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        let back = Camera::from_slice(&cam.to_array()).unwrap();
        assert_eq!(back, cam);
    }
}
