//! UV-space feature maps: chart mapping of local Gaussian positions, bilinear
//! sampling with adjoints, texel rasterization tables and normal-map baking.
//!
//! Texel `(x, y)` has its center at `((x + 0.5) / W, (y + 0.5) / H)`. Sampling
//! clamps to the edge; there is no wraparound.

use std::path::Path;

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, TriangleFrame};
use crate::io::write_atomic;
use crate::raster::Camera;

/// Default UV map resolution.
pub const DEFAULT_UV_RES: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct UVMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major `[y][x][c]`.
    pub data: Vec<f64>,
}

impl UVMap {
    /// Zero map. Sizes below 2 are allowed here for internal coarse grids;
    /// [`UVMap::from_data`] enforces the public invariant.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(width >= 1 && height >= 1 && channels >= 1);
        UVMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let mut map = Self::zeros(width, height, value.len());
        for texel in map.data.chunks_exact_mut(value.len()) {
            texel.copy_from_slice(value);
        }
        map
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let map = UVMap {
            width,
            height,
            channels,
            data,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 || self.channels == 0 {
            return Err(Error::Config(format!(
                "uv map must be at least 2x2 with one channel, got {}x{}x{}",
                self.width, self.height, self.channels
            )));
        }
        crate::error::check_len(
            "uv map data",
            self.width * self.height * self.channels,
            self.data.len(),
        )?;
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("uv map"));
        }
        Ok(())
    }

    pub fn num_texels(&self) -> usize {
        self.width * self.height
    }

    pub fn texel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn texel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &UVMap) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, width: usize, height: usize, channels: usize) -> Result<()> {
        if self.width == width && self.height == height && self.channels == channels {
            Ok(())
        } else {
            Err(Error::Resolution {
                expected_w: width,
                expected_h: height,
                expected_c: channels,
                w: self.width,
                h: self.height,
                c: self.channels,
            })
        }
    }

    pub fn add_assign(&mut self, other: &UVMap) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Writes the first three channels as an 8-bit RGB PNG (values clamped to
    /// [0,1]; single-channel maps are written as gray).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut rgb = Vec::with_capacity(self.num_texels() * 3);
        for texel in self.data.chunks_exact(self.channels) {
            for c in 0..3 {
                let v = match self.channels {
                    1 => texel[0],
                    _ => texel.get(c).copied().unwrap_or(0.0),
                };
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        let png = crate::raster::encode_png(self.width as u32, self.height as u32, &rgb)?;
        write_atomic(path, &png)
    }
}

/// Texel center of texel `(x, y)` in uv coordinates.
pub fn texel_center(x: usize, y: usize, width: usize, height: usize) -> [f64; 2] {
    [(x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64]
}

/// The four texels and weights used by one bilinear lookup, together with
/// the weight derivatives w.r.t. the uv coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    pub texels: [usize; 4],
    pub weights: [f64; 4],
    pub d_weights_du: [f64; 4],
    pub d_weights_dv: [f64; 4],
}

impl BilinearTap {
    pub fn new(width: usize, height: usize, p: [f64; 2]) -> Result<Self> {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::NonFinite("uv coordinate"));
        }
        let (x0, x1, tx) = axis_taps(p[0], width);
        let (y0, y1, ty) = axis_taps(p[1], height);
        let (w, h) = (width as f64, height as f64);
        Ok(BilinearTap {
            texels: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
            weights: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
            d_weights_du: [-w * (1.0 - ty), w * (1.0 - ty), -w * ty, w * ty],
            d_weights_dv: [-h * (1.0 - tx), -h * tx, h * (1.0 - tx), h * tx],
        })
    }

    /// Interpolated value of every channel, written into `out`.
    pub fn gather(&self, map: &UVMap, out: &mut [f64]) {
        let c = map.channels;
        out[..c].fill(0.0);
        for k in 0..4 {
            let base = self.texels[k] * c;
            for (ch, o) in out[..c].iter_mut().enumerate() {
                *o += self.weights[k] * map.data[base + ch];
            }
        }
    }

    /// Scatters `d_out` into `d_map` and returns dL/dp.
    pub fn scatter(&self, map: &UVMap, d_out: &[f64], d_map: Option<&mut UVMap>) -> [f64; 2] {
        let c = map.channels;
        let mut d_p = [0.0; 2];
        for k in 0..4 {
            let base = self.texels[k] * c;
            let mut dot = 0.0;
            for ch in 0..c {
                dot += d_out[ch] * map.data[base + ch];
            }
            d_p[0] += self.d_weights_du[k] * dot;
            d_p[1] += self.d_weights_dv[k] * dot;
        }
        if let Some(d_map) = d_map {
            for k in 0..4 {
                let base = self.texels[k] * c;
                for ch in 0..c {
                    d_map.data[base + ch] += self.weights[k] * d_out[ch];
                }
            }
        }
        d_p
    }
}

fn axis_taps(coord: f64, size: usize) -> (usize, usize, f64) {
    let f = coord * size as f64 - 0.5;
    let f0 = f.floor();
    let t = f - f0;
    let last = (size - 1) as f64;
    let i0 = f0.clamp(0.0, last) as usize;
    let i1 = (f0 + 1.0).clamp(0.0, last) as usize;
    // Past the edge both taps hit the same texel; a zero fraction keeps the
    // lookup exact there.
    if i0 == i1 {
        (i0, i1, 0.0)
    } else {
        (i0, i1, t)
    }
}

/// Bilinear lookup of all channels at `p`.
pub fn sample(map: &UVMap, p: [f64; 2]) -> Result<Vec<f64>> {
    let tap = BilinearTap::new(map.width, map.height, p)?;
    let mut out = vec![0.0; map.channels];
    tap.gather(map, &mut out);
    Ok(out)
}

/// Adjoint of [`sample`]: accumulates into `d_map` and returns dL/dp.
pub fn sample_backward(map: &UVMap, p: [f64; 2], d_out: &[f64], d_map: &mut UVMap) -> Result<[f64; 2]> {
    crate::error::check_len("sample gradient channels", map.channels, d_out.len())?;
    let tap = BilinearTap::new(map.width, map.height, p)?;
    Ok(tap.scatter(map, d_out, Some(d_map)))
}

/// Bilinear resampling of `coarse` at every texel center of a
/// `width × height` target.
pub fn upsample(coarse: &UVMap, width: usize, height: usize) -> UVMap {
    let mut out = UVMap::zeros(width, height, coarse.channels);
    let c = coarse.channels;
    for y in 0..height {
        for x in 0..width {
            let tap = BilinearTap::new(coarse.width, coarse.height, texel_center(x, y, width, height))
                .expect("texel centers are finite");
            let i = (y * width + x) * c;
            tap.gather(coarse, &mut out.data[i..i + c]);
        }
    }
    out
}

/// Adjoint of [`upsample`].
pub fn upsample_backward(coarse: &UVMap, d_fine: &UVMap) -> UVMap {
    let mut d_coarse = UVMap::zeros(coarse.width, coarse.height, coarse.channels);
    let c = coarse.channels;
    for y in 0..d_fine.height {
        for x in 0..d_fine.width {
            let i = (y * d_fine.width + x) * c;
            let d = &d_fine.data[i..i + c];
            if d.iter().all(|v| *v == 0.0) {
                continue;
            }
            let tap = BilinearTap::new(
                coarse.width,
                coarse.height,
                texel_center(x, y, d_fine.width, d_fine.height),
            )
            .expect("texel centers are finite");
            for k in 0..4 {
                let base = tap.texels[k] * c;
                for ch in 0..c {
                    d_coarse.data[base + ch] += tap.weights[k] * d[ch];
                }
            }
        }
    }
    d_coarse
}

/// A triangle's uv chart together with its footprint in the triangle's local
/// frame (rest pose).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvChart {
    /// Corner positions in the local e1–e2 plane.
    pub local: [[f64; 2]; 3],
    pub uv: [[f64; 2]; 3],
    /// d uv / d (x, y) of the local point.
    pub jacobian: Matrix2<f64>,
}

impl UvChart {
    pub fn new(local: [[f64; 2]; 3], uv: [[f64; 2]; 3]) -> Option<Self> {
        let p = Matrix2::new(
            local[1][0] - local[0][0],
            local[2][0] - local[0][0],
            local[1][1] - local[0][1],
            local[2][1] - local[0][1],
        );
        let q = Matrix2::new(
            uv[1][0] - uv[0][0],
            uv[2][0] - uv[0][0],
            uv[1][1] - uv[0][1],
            uv[2][1] - uv[0][1],
        );
        if q.determinant().abs() < 1e-14 {
            return None;
        }
        let p_inv = p.try_inverse().filter(|_| p.determinant().abs() > 1e-14)?;
        Some(UvChart {
            local,
            uv,
            jacobian: q * p_inv,
        })
    }

    /// Barycentric coordinates of a local planar point (may be negative).
    pub fn barycentric(&self, x: f64, y: f64) -> [f64; 3] {
        let [a, b, c] = self.local;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Charts for every triangle, with footprints taken from `frames` of the
/// rest mesh.
pub fn build_charts(rest: &TriMesh, frames: &[TriangleFrame]) -> Result<Vec<UvChart>> {
    (0..rest.triangles.len())
        .map(|t| {
            let corners = rest.corners(t);
            let mut local = [[0.0; 2]; 3];
            for (i, corner) in corners.iter().enumerate() {
                let l = frames[t].to_local(corner);
                local[i] = [l.x, l.y];
            }
            UvChart::new(local, rest.uv_coords[t]).ok_or(Error::DegenerateChart(t))
        })
        .collect()
}

/// A uv coordinate produced by [`uv_of_local`], with the per-axis clamp mask
/// needed by the adjoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvPoint {
    pub uv: [f64; 2],
    pub clamped: [bool; 2],
}

/// Maps a local Gaussian position to uv: drop the normal coordinate, take
/// barycentrics in the chart footprint (extrapolation allowed), interpolate
/// corner uvs and clamp into [0,1]².
pub fn uv_of_local(mu_l: &Vector3<f64>, chart: &UvChart) -> UvPoint {
    let bary = chart.barycentric(mu_l.x, mu_l.y);
    let mut uv = [0.0; 2];
    for (l, corner) in bary.iter().zip(&chart.uv) {
        uv[0] += l * corner[0];
        uv[1] += l * corner[1];
    }
    let mut clamped = [false; 2];
    for a in 0..2 {
        if uv[a] < 0.0 || uv[a] > 1.0 {
            uv[a] = uv[a].clamp(0.0, 1.0);
            clamped[a] = true;
        }
    }
    UvPoint { uv, clamped }
}

/// Adjoint of [`uv_of_local`]: dL/duv to dL/dmu_l.
pub fn uv_of_local_backward(point: &UvPoint, chart: &UvChart, d_uv: [f64; 2]) -> Vector3<f64> {
    let mut d = Vector2::new(d_uv[0], d_uv[1]);
    for a in 0..2 {
        if point.clamped[a] {
            d[a] = 0.0;
        }
    }
    let g = chart.jacobian.transpose() * d;
    Vector3::new(g.x, g.y, 0.0)
}

/// Per-texel covering triangle and barycentrics of the texel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelEntry {
    pub triangle: usize,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexelTable {
    pub width: usize,
    pub height: usize,
    pub entries: Vec<Option<TexelEntry>>,
}

impl TexelTable {
    pub fn coverage(&self) -> f64 {
        self.entries.iter().filter(|e| e.is_some()).count() as f64 / self.entries.len() as f64
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&TexelEntry> {
        self.entries[y * self.width + x].as_ref()
    }
}

fn uv_barycentric(uv: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = *uv;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

const INSIDE_TOL: f64 = 1e-12;
const STRICT_INTERIOR: f64 = 1e-9;

/// Rasterizes the uv charts of `mesh` at `width × height`. A texel belongs to
/// the first chart containing its center; a center strictly inside two
/// charts is an overlap error.
pub fn build_texel_table(mesh: &TriMesh, width: usize, height: usize) -> Result<TexelTable> {
    let bboxes: Vec<[f64; 4]> = mesh
        .uv_coords
        .iter()
        .map(|uv| {
            let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
            for c in uv {
                for a in 0..2 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            [lo[0], lo[1], hi[0], hi[1]]
        })
        .collect();
    for (t, uv) in mesh.uv_coords.iter().enumerate() {
        let [a, b, c] = *uv;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-14 {
            return Err(Error::DegenerateChart(t));
        }
    }
    let mut entries = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let p = texel_center(x, y, width, height);
            let mut found: Option<TexelEntry> = None;
            for (t, bb) in bboxes.iter().enumerate() {
                if p[0] < bb[0] - INSIDE_TOL
                    || p[0] > bb[2] + INSIDE_TOL
                    || p[1] < bb[1] - INSIDE_TOL
                    || p[1] > bb[3] + INSIDE_TOL
                {
                    continue;
                }
                let bary = uv_barycentric(&mesh.uv_coords[t], p);
                let min = bary[0].min(bary[1]).min(bary[2]);
                if min < -INSIDE_TOL {
                    continue;
                }
                match &found {
                    None => found = Some(TexelEntry { triangle: t, bary }),
                    Some(first) if min > STRICT_INTERIOR => {
                        return Err(Error::OverlappingCharts {
                            x,
                            y,
                            first: first.triangle,
                            second: t,
                        })
                    }
                    Some(_) => {}
                }
            }
            entries.push(found);
        }
    }
    Ok(TexelTable {
        width,
        height,
        entries,
    })
}

/// Camera-space unit normal of a world direction, in the convention where a
/// surface facing the camera maps to `+z` (x right, y up).
pub fn camera_normal(camera: &Camera, n: &Vector3<f64>) -> Vector3<f64> {
    let c = camera.rotation * n;
    Vector3::new(c.x, -c.y, -c.z)
}

/// Bakes area-weighted vertex normals of `mesh`, oriented w.r.t. `camera`,
/// into uv space. Uncovered texels are zero.
pub fn bake_normal_map(mesh: &TriMesh, camera: &Camera, table: &TexelTable) -> UVMap {
    let normals: Vec<Vector3<f64>> = mesh
        .vertex_normals()
        .iter()
        .map(|n| camera_normal(camera, n))
        .collect();
    let mut map = UVMap::zeros(table.width, table.height, 3);
    for (i, entry) in table.entries.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let tri = mesh.triangles[entry.triangle];
        let n = normals[tri[0]] * entry.bary[0]
            + normals[tri[1]] * entry.bary[1]
            + normals[tri[2]] * entry.bary[2];
        let len = n.norm();
        if len > 1e-12 {
            map.data[i * 3..i * 3 + 3].copy_from_slice((n / len).as_slice());
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::triangle_frames;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chart_for_unit_triangle() -> (TriMesh, UvChart) {
        let mesh = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            vec![[[0.2, 0.2], [0.8, 0.2], [0.2, 0.6]]],
        )
        .unwrap();
        let frames = triangle_frames(&mesh).unwrap();
        let chart = build_charts(&mesh, &frames).unwrap()[0];
        (mesh, chart)
    }

    #[test]
    fn centroid_maps_to_mean_uv() {
        let (_, chart) = chart_for_unit_triangle();
        let p = uv_of_local(&Vector3::zeros(), &chart);
        assert!((p.uv[0] - 0.4).abs() < 1e-15 && (p.uv[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vertices_and_midpoints_map_to_their_uvs() {
        let (_, chart) = chart_for_unit_triangle();
        for i in 0..3 {
            let l = chart.local[i];
            let p = uv_of_local(&Vector3::new(l[0], l[1], 0.7), &chart);
            assert!((p.uv[0] - chart.uv[i][0]).abs() < 1e-14);
            assert!((p.uv[1] - chart.uv[i][1]).abs() < 1e-14);
        }
        let mid = [
            0.5 * (chart.local[0][0] + chart.local[1][0]),
            0.5 * (chart.local[0][1] + chart.local[1][1]),
        ];
        let p = uv_of_local(&Vector3::new(mid[0], mid[1], 0.0), &chart);
        assert!((p.uv[0] - 0.5).abs() < 1e-14 && (p.uv[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn far_points_are_clamped() {
        let (_, chart) = chart_for_unit_triangle();
        let p = uv_of_local(&Vector3::new(100.0, 0.0, 0.0), &chart);
        assert!(p.clamped[0]);
        assert_eq!(p.uv[0], 1.0);
        let g = uv_of_local_backward(&p, &chart, [1.0, 0.0]);
        assert_eq!(g, Vector3::zeros());
    }

    #[test]
    fn degenerate_chart_is_rejected() {
        assert!(UvChart::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]).is_none());
    }

    #[test]
    fn constant_map_has_zero_spatial_gradient() {
        let map = UVMap::filled(5, 4, &[0.25, -1.0]);
        let mut d_map = UVMap::zeros(5, 4, 2);
        for p in [[0.0, 0.0], [0.31, 0.77], [1.0, 0.5], [0.5, 0.5]] {
            let v = sample(&map, p).unwrap();
            assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] + 1.0).abs() < 1e-15);
            let dp = sample_backward(&map, p, &[1.0, 1.0], &mut d_map).unwrap();
            assert!(dp[0].abs() < 1e-12 && dp[1].abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_center_is_mean() {
        let map = UVMap::from_data(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(sample(&map, [0.5, 0.5]).unwrap(), vec![1.5]);
    }

    #[test]
    fn non_finite_uv_is_an_error() {
        let map = UVMap::zeros(2, 2, 1);
        assert!(sample(&map, [f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn reproduces_bilinear_functions() {
        let (w, h) = (7, 5);
        let f = |u: f64, v: f64| 0.3 + 1.7 * u - 0.4 * v + 2.5 * u * v;
        let mut map = UVMap::zeros(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let c = texel_center(x, y, w, h);
                map.texel_mut(x, y)[0] = f(c[0], c[1]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let u = rng.gen_range(0.5 / w as f64..1.0 - 0.5 / w as f64);
            let v = rng.gen_range(0.5 / h as f64..1.0 - 0.5 / h as f64);
            assert!((sample(&map, [u, v]).unwrap()[0] - f(u, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn map_adjoint_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h, c) = (6, 6, 3);
        let rand_map = |rng: &mut ChaCha8Rng| {
            UVMap::from_data(w, h, c, (0..w * h * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        for _ in 0..20 {
            let map = rand_map(&mut rng);
            let delta = rand_map(&mut rng);
            let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let d_out: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut d_map = UVMap::zeros(w, h, c);
            sample_backward(&map, p, &d_out, &mut d_map).unwrap();
            let inner: f64 = d_map.data.iter().zip(&delta.data).map(|(a, b)| a * b).sum();
            // sample is linear in the map, so the directional derivative is sample(delta).
            let dir: f64 = sample(&delta, p).unwrap().iter().zip(&d_out).map(|(a, b)| a * b).sum();
            assert!((inner - dir).abs() < 1e-9);
        }
    }

    #[test]
    fn texel_table_inside_and_outside() {
        let (mesh, _) = chart_for_unit_triangle();
        let table = build_texel_table(&mesh, 10, 10).unwrap();
        // Texel (3, 3) center (0.35, 0.35) lies inside the chart.
        let e = table.get(3, 3).unwrap();
        assert_eq!(e.triangle, 0);
        assert!((e.bary.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(e.bary.iter().all(|b| *b >= -1e-9));
        assert!(table.get(9, 9).is_none());
    }

    #[test]
    fn overlapping_charts_are_reported() {
        let uv = [[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]];
        let mesh = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
            vec![uv, uv],
        )
        .unwrap();
        assert!(matches!(
            build_texel_table(&mesh, 8, 8),
            Err(Error::OverlappingCharts { first: 0, second: 1, .. })
        ));
    }

    #[test]
    fn facing_triangle_bakes_plus_z() {
        let (mesh, _) = chart_for_unit_triangle();
        // Triangle normal is +z; a camera looking down world -z sees its front.
        let camera = Camera::look_at(
            Vector3::new(0.3, 0.3, 3.0),
            Vector3::new(0.3, 0.3, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            50.0,
            16,
            16,
        );
        let table = build_texel_table(&mesh, 16, 16).unwrap();
        let map = bake_normal_map(&mesh, &camera, &table);
        let mut covered = 0;
        for (i, e) in table.entries.iter().enumerate() {
            let n = &map.data[i * 3..i * 3 + 3];
            if e.is_some() {
                covered += 1;
                assert!((n[0]).abs() < 1e-12 && (n[1]).abs() < 1e-12 && (n[2] - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(n, &[0.0, 0.0, 0.0]);
            }
        }
        assert!(covered > 0);
    }
}
