//! Triangle meshes, blendshape deformation, per-triangle local frames and the
//! local-to-global binding of Gaussians.
//!
//! A Gaussian bound to triangle `t` stores its position, log-scale and
//! rotation in that triangle's frame `(T, R, k)`; the world-space values are
//!
//! ```text
//! mu = k R mu_l + T,   s = k exp(log_s_l),   r = normalize(quat(R) ⊗ r_l)
//! ```

use log::warn;
use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::quat::{self, Quat};

/// Minimum admissible edge length for a non-degenerate triangle.
pub const MIN_EDGE: f64 = 1e-9;

/// Initial local scale of a freshly bound Gaussian, in units of the mean edge.
pub const INIT_LOCAL_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// One uv per (triangle, corner).
    pub uv_coords: Vec<[[f64; 2]; 3]>,
}

impl TriMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        uv_coords: Vec<[[f64; 2]; 3]>,
    ) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            triangles,
            uv_coords,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Checks index bounds, uv ranges and rest-pose non-degeneracy.
    pub fn validate(&self) -> Result<()> {
        check_len("uv corners per triangle", self.triangles.len(), self.uv_coords.len())?;
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= self.vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {bad} but mesh has {} vertices",
                    self.vertices.len()
                )));
            }
            let shortest = self.shortest_edge(t);
            if !(shortest > MIN_EDGE) {
                return Err(Error::DegenerateTriangle {
                    index: t,
                    edge: shortest,
                });
            }
        }
        for (t, corners) in self.uv_coords.iter().enumerate() {
            for uv in corners {
                if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                    return Err(Error::InvalidMesh(format!(
                        "uv {uv:?} of triangle {t} outside [0,1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn corners(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    fn shortest_edge(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        (b - a).norm().min((c - b).norm()).min((a - c).norm())
    }

    /// Area-weighted vertex normals (unit length; zero for isolated vertices).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]];
            // |cross| is twice the area, so summing cross products area-weights.
            let n = (b - a).cross(&(c - a));
            for &v in tri {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Applies a rigid motion `x -> q x + t` to every vertex.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation * v + translation)
                .collect(),
            triangles: self.triangles.clone(),
            uv_coords: self.uv_coords.clone(),
        }
    }
}

/// One rigid degree of freedom of the pose: rotation by `θ` about `axis`
/// (through the origin) followed by a translation `θ · translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseAxis {
    pub axis: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseAxis {
    fn apply(&self, theta: f64, v: &Vector3<f64>) -> Vector3<f64> {
        let rot = quat::to_rotation(&quat::from_axis_angle(self.axis, theta));
        rot * v + Vector3::from(self.translation) * theta
    }
}

/// Synthetic stand-in for a parametric face model: linear shape blendshapes
/// followed by a chain of rigid pose transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeRig {
    pub rest: TriMesh,
    pub shape_deltas: Vec<Vec<Vector3<f64>>>,
    pub pose_axes: Vec<PoseAxis>,
}

impl BlendshapeRig {
    pub fn new(
        rest: TriMesh,
        shape_deltas: Vec<Vec<Vector3<f64>>>,
        pose_axes: Vec<PoseAxis>,
    ) -> Result<Self> {
        for deltas in &shape_deltas {
            check_len("blendshape deltas", rest.vertices.len(), deltas.len())?;
        }
        for axis in &pose_axes {
            let n = Vector3::from(axis.axis).norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("pose axis {:?} is not unit length", axis.axis)));
            }
        }
        Ok(BlendshapeRig {
            rest,
            shape_deltas,
            pose_axes,
        })
    }

    pub fn num_shapes(&self) -> usize {
        self.shape_deltas.len()
    }

    pub fn num_pose(&self) -> usize {
        self.pose_axes.len()
    }
}

/// Deforms the rest mesh: `pose(θ)(rest + Σ ψ_k δ_k)`.
pub fn deform(rig: &BlendshapeRig, psi: &[f64], theta: &[f64]) -> Result<TriMesh> {
    check_len("psi", rig.num_shapes(), psi.len())?;
    check_len("theta", rig.num_pose(), theta.len())?;
    let vertices = rig
        .rest
        .vertices
        .iter()
        .enumerate()
        .map(|(i, rest)| {
            let mut v = *rest;
            for (weight, deltas) in psi.iter().zip(&rig.shape_deltas) {
                v += deltas[i] * *weight;
            }
            for (angle, axis) in theta.iter().zip(&rig.pose_axes) {
                v = axis.apply(*angle, &v);
            }
            v
        })
        .collect();
    Ok(TriMesh {
        vertices,
        triangles: rig.rest.triangles.clone(),
        uv_coords: rig.rest.uv_coords.clone(),
    })
}

/// Local coordinate system of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleFrame {
    /// Centroid `T`.
    pub centroid: Vector3<f64>,
    /// Columns `[e1, e2, n]`.
    pub rotation: Matrix3<f64>,
    /// Mean edge length `k`.
    pub scale: f64,
    /// `quat(R)`, cached for the rotation binding.
    pub quat: Quat,
}

impl TriangleFrame {
    fn from_parts(centroid: Vector3<f64>, rotation: Matrix3<f64>, scale: f64) -> Self {
        TriangleFrame {
            centroid,
            rotation,
            scale,
            quat: quat::from_rotation(&rotation),
        }
    }

    /// Expresses a world point in this frame's local (unit = mean edge) space.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.centroid) / self.scale
    }
}

fn frame_of(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<TriangleFrame> {
    let ab = b - a;
    let bc = c - b;
    let ca = a - c;
    let (lab, lbc, lca) = (ab.norm(), bc.norm(), ca.norm());
    if !(lab.min(lbc).min(lca) > MIN_EDGE) {
        return None;
    }
    let normal = ab.cross(&(c - a));
    let nlen = normal.norm();
    if !(nlen > MIN_EDGE * MIN_EDGE) {
        return None;
    }
    let e1 = ab / lab;
    let n = normal / nlen;
    let e2 = n.cross(&e1);
    let centroid = (a + b + c) / 3.0;
    let scale = (lab + lbc + lca) / 3.0;
    Some(TriangleFrame::from_parts(
        centroid,
        Matrix3::from_columns(&[e1, e2, n]),
        scale,
    ))
}

/// Frames of every triangle; fails on the first degenerate triangle.
pub fn triangle_frames(mesh: &TriMesh) -> Result<Vec<TriangleFrame>> {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            frame_of(&a, &b, &c).ok_or_else(|| Error::DegenerateTriangle {
                index: t,
                edge: mesh.shortest_edge(t),
            })
        })
        .collect()
}

/// Frames of a deformed mesh. Degenerate triangles keep the rotation of
/// `previous` (identity when absent) and get `k` clamped to [`MIN_EDGE`].
pub fn triangle_frames_lenient(
    mesh: &TriMesh,
    previous: Option<&[TriangleFrame]>,
) -> Vec<TriangleFrame> {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            frame_of(&a, &b, &c).unwrap_or_else(|| {
                warn!("triangle {t} degenerate after deformation; reusing previous rotation");
                let rotation = previous
                    .and_then(|p| p.get(t))
                    .map(|f| f.rotation)
                    .unwrap_or_else(Matrix3::identity);
                let scale = ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0;
                TriangleFrame::from_parts((a + b + c) / 3.0, rotation, scale.max(MIN_EDGE))
            })
        })
        .collect()
}

/// Local parameters of every Gaussian plus its triangle binding.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub mu_l: Vec<Vector3<f64>>,
    pub log_s_l: Vec<Vector3<f64>>,
    pub r_l: Vec<Quat>,
    pub tri_index: Vec<usize>,
}

impl GaussianCloud {
    /// One Gaussian per triangle at the centroid, identity rotation and local
    /// scale [`INIT_LOCAL_SCALE`].
    pub fn one_per_triangle(num_triangles: usize) -> Self {
        let log_s = INIT_LOCAL_SCALE.ln();
        GaussianCloud {
            mu_l: vec![Vector3::zeros(); num_triangles],
            log_s_l: vec![Vector3::repeat(log_s); num_triangles],
            r_l: vec![quat::IDENTITY; num_triangles],
            tri_index: (0..num_triangles).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tri_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tri_index.is_empty()
    }

    pub fn validate(&self, num_triangles: usize) -> Result<()> {
        let n = self.len();
        check_len("cloud mu_l", n, self.mu_l.len())?;
        check_len("cloud log_s_l", n, self.log_s_l.len())?;
        check_len("cloud r_l", n, self.r_l.len())?;
        if let Some(&bad) = self.tri_index.iter().find(|&&t| t >= num_triangles) {
            return Err(Error::InvalidMesh(format!(
                "gaussian bound to triangle {bad} but mesh has {num_triangles}"
            )));
        }
        Ok(())
    }
}

/// World-space geometry of bound Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGeometry {
    pub mu: Vec<Vector3<f64>>,
    pub scale: Vec<Vector3<f64>>,
    pub rot: Vec<Quat>,
}

/// Gradients w.r.t. the local parameters of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGrads {
    pub mu_l: Vec<Vector3<f64>>,
    pub log_s_l: Vec<Vector3<f64>>,
    pub r_l: Vec<Quat>,
}

impl CloudGrads {
    pub fn zeros(n: usize) -> Self {
        CloudGrads {
            mu_l: vec![Vector3::zeros(); n],
            log_s_l: vec![Vector3::zeros(); n],
            r_l: vec![[0.0; 4]; n],
        }
    }

    pub fn add_assign(&mut self, other: &CloudGrads) {
        for (a, b) in self.mu_l.iter_mut().zip(&other.mu_l) {
            *a += b;
        }
        for (a, b) in self.log_s_l.iter_mut().zip(&other.log_s_l) {
            *a += b;
        }
        for (a, b) in self.r_l.iter_mut().zip(&other.r_l) {
            for i in 0..4 {
                a[i] += b[i];
            }
        }
    }
}

/// Binds a single Gaussian. Returns `(mu, s, r)`.
pub fn bind_one(
    frame: &TriangleFrame,
    mu_l: &Vector3<f64>,
    log_s_l: &Vector3<f64>,
    r_l: &Quat,
) -> (Vector3<f64>, Vector3<f64>, Quat) {
    let mu = frame.rotation * mu_l * frame.scale + frame.centroid;
    let s = log_s_l.map(f64::exp) * frame.scale;
    let r = quat::normalize(&quat::mul(&frame.quat, r_l));
    (mu, s, r)
}

/// Adjoint of [`bind_one`]: upstream gradients on `(mu, s, r)` to gradients
/// on `(mu_l, log_s_l, r_l)`.
pub fn bind_one_backward(
    frame: &TriangleFrame,
    log_s_l: &Vector3<f64>,
    r_l: &Quat,
    d_mu: &Vector3<f64>,
    d_s: &Vector3<f64>,
    d_r: &Quat,
) -> (Vector3<f64>, Vector3<f64>, Quat) {
    let d_mu_l = frame.rotation.transpose() * d_mu * frame.scale;
    let d_log_s = d_s.component_mul(&log_s_l.map(f64::exp)) * frame.scale;
    let composed = quat::mul(&frame.quat, r_l);
    let d_composed = quat::normalize_backward(&composed, d_r);
    let d = quat::left_matrix(&frame.quat).transpose() * Vector4::from(d_composed);
    (d_mu_l, d_log_s, [d[0], d[1], d[2], d[3]])
}

pub fn bind_to_global(cloud: &GaussianCloud, frames: &[TriangleFrame]) -> GlobalGeometry {
    let n = cloud.len();
    let mut out = GlobalGeometry {
        mu: Vec::with_capacity(n),
        scale: Vec::with_capacity(n),
        rot: Vec::with_capacity(n),
    };
    for i in 0..n {
        let frame = &frames[cloud.tri_index[i]];
        let (mu, s, r) = bind_one(frame, &cloud.mu_l[i], &cloud.log_s_l[i], &cloud.r_l[i]);
        out.mu.push(mu);
        out.scale.push(s);
        out.rot.push(r);
    }
    out
}

/// Adjoint of [`bind_to_global`].
pub fn bind_backward(
    cloud: &GaussianCloud,
    frames: &[TriangleFrame],
    d_global: &GlobalGeometry,
) -> CloudGrads {
    let mut grads = CloudGrads::zeros(cloud.len());
    for i in 0..cloud.len() {
        let frame = &frames[cloud.tri_index[i]];
        let (dm, ds, dr) = bind_one_backward(
            frame,
            &cloud.log_s_l[i],
            &cloud.r_l[i],
            &d_global.mu[i],
            &d_global.scale[i],
            &d_global.rot[i],
        );
        grads.mu_l[i] = dm;
        grads.log_s_l[i] = ds;
        grads.r_l[i] = dr;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            vec![[[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]]],
        )
        .unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let q = quat::normalize(&[
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]);
        quat::to_rotation(&q)
    }

    fn two_shape_rig() -> BlendshapeRig {
        let rest = unit_triangle();
        let d0 = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 2.0), Vector3::zeros()];
        let d1 = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.5)];
        let axes = vec![PoseAxis {
            axis: [0.0, 0.0, 1.0],
            translation: [0.0, 0.0, 0.0],
        }];
        BlendshapeRig::new(rest, vec![d0, d1], axes).unwrap()
    }

    #[test]
    fn deform_identity_is_exact() {
        let rig = two_shape_rig();
        let mesh = deform(&rig, &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(mesh, rig.rest);
    }

    #[test]
    fn deform_one_hot_adds_first_delta() {
        let rig = two_shape_rig();
        let mesh = deform(&rig, &[1.0, 0.0], &[0.0]).unwrap();
        for (i, v) in mesh.vertices.iter().enumerate() {
            assert_eq!(*v, rig.rest.vertices[i] + rig.shape_deltas[0][i]);
        }
    }

    #[test]
    fn deform_linear_combination() {
        let rig = two_shape_rig();
        let mesh = deform(&rig, &[0.3, 0.7], &[0.0]).unwrap();
        // Vertex 0: (0,0,0) + 0.3*(0,0,1) + 0.7*(1,0,0).
        assert!((mesh.vertices[0] - Vector3::new(0.7, 0.0, 0.3)).norm() < 1e-15);
        // Vertex 2: (0,1,0) + 0.7*(0,-1,0.5).
        assert!((mesh.vertices[2] - Vector3::new(0.0, 0.3, 0.35)).norm() < 1e-15);
    }

    #[test]
    fn deform_rejects_wrong_dimensions() {
        let rig = two_shape_rig();
        assert!(matches!(deform(&rig, &[0.0], &[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(deform(&rig, &[0.0, 0.0], &[]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn deform_pose_rotates_about_axis() {
        let rig = two_shape_rig();
        let mesh = deform(&rig, &[0.0, 0.0], &[std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((mesh.vertices[1] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn axis_aligned_frame() {
        let frames = triangle_frames(&unit_triangle()).unwrap();
        let f = &frames[0];
        assert!((f.centroid - Vector3::new(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((f.scale - (2.0 + 2f64.sqrt()) / 3.0).abs() < 1e-15);
        assert!((f.rotation - Matrix3::identity()).norm() < 1e-15);
        assert_eq!(f.quat, quat::IDENTITY);
    }

    #[test]
    fn frames_are_orthonormal_and_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mesh = unit_triangle();
        let base = triangle_frames(&mesh).unwrap()[0];
        for _ in 0..20 {
            let q = random_rotation(&mut rng);
            let t = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 1.0);
            let moved = triangle_frames(&mesh.transformed(&q, &t)).unwrap()[0];
            let r = moved.rotation;
            assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            assert!((moved.centroid - (q * base.centroid + t)).norm() < 1e-12);
            assert!((r - q * base.rotation).norm() < 1e-12);
            assert!((moved.scale - base.scale).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_triangle_is_named() {
        let mesh = TriMesh {
            vertices: vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)],
            triangles: vec![[0, 1, 2]],
            uv_coords: vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]],
        };
        match triangle_frames(&mesh) {
            Err(Error::DegenerateTriangle { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected degenerate error, got {other:?}"),
        }
        let collapsed = TriMesh {
            vertices: vec![Vector3::zeros(), Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)],
            ..mesh
        };
        assert!(matches!(collapsed.validate(), Err(Error::DegenerateTriangle { index: 0, .. })));
    }

    #[test]
    fn lenient_frames_reuse_previous_rotation() {
        let good = triangle_frames(&unit_triangle()).unwrap();
        let mut collapsed = unit_triangle();
        collapsed.vertices = vec![Vector3::new(0.5, 0.5, 0.5); 3];
        let frames = triangle_frames_lenient(&collapsed, Some(&good));
        assert_eq!(frames[0].rotation, good[0].rotation);
        assert_eq!(frames[0].scale, MIN_EDGE);
    }

    #[test]
    fn bind_identity_locals() {
        let frames = triangle_frames(&unit_triangle()).unwrap();
        let cloud = GaussianCloud {
            mu_l: vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)],
            log_s_l: vec![Vector3::zeros(); 2],
            r_l: vec![quat::IDENTITY; 2],
            tri_index: vec![0, 0],
        };
        let g = bind_to_global(&cloud, &frames);
        let k = frames[0].scale;
        assert!((g.mu[0] - frames[0].centroid).norm() < 1e-15);
        assert!((g.scale[0] - Vector3::repeat(k)).norm() < 1e-15);
        assert_eq!(g.rot[0], quat::IDENTITY);
        assert!((g.mu[1] - (frames[0].centroid + Vector3::new(k, 0.0, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn bind_backward_chain_rule() {
        let frame = TriangleFrame::from_parts(Vector3::zeros(), Matrix3::identity(), 2.0);
        let (d_mu_l, _, _) = bind_one_backward(
            &frame,
            &Vector3::zeros(),
            &quat::IDENTITY,
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::zeros(),
            &[0.0; 4],
        );
        assert_eq!(d_mu_l, Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn bind_backward_zero_upstream() {
        let frames = triangle_frames(&unit_triangle()).unwrap();
        let cloud = GaussianCloud::one_per_triangle(1);
        let zero = GlobalGeometry {
            mu: vec![Vector3::zeros()],
            scale: vec![Vector3::zeros()],
            rot: vec![[0.0; 4]],
        };
        let g = bind_backward(&cloud, &frames, &zero);
        assert_eq!(g, CloudGrads::zeros(1));
    }

    #[test]
    fn scale_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mesh = unit_triangle();
        let mut cloud = GaussianCloud::one_per_triangle(1);
        cloud.mu_l[0] = Vector3::new(0.3, -0.2, 0.5);
        let g = bind_to_global(&cloud, &triangle_frames(&mesh).unwrap());
        let lambda = rng.gen_range(0.5..3.0);
        let scaled = mesh.transformed(&(Matrix3::identity() * lambda), &Vector3::zeros());
        let gs = bind_to_global(&cloud, &triangle_frames(&scaled).unwrap());
        assert!((gs.mu[0] - g.mu[0] * lambda).norm() < 1e-12);
        assert!((gs.scale[0] - g.scale[0] * lambda).norm() < 1e-12);
    }

    #[test]
    fn frames_are_deterministic() {
        let mesh = unit_triangle();
        assert_eq!(triangle_frames(&mesh).unwrap(), triangle_frames(&mesh).unwrap());
    }
}
