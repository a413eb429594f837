//! Central finite-difference checks of every analytic adjoint.
//!
//! Each suite draws random instances from a seeded generator, perturbs one
//! input at a time by `±h` and compares `(f(x+h) − f(x−h)) / 2h` with the
//! analytic gradient. Inputs whose `±10h` neighbourhood changes the discrete
//! structure of the computation (sort order, cutoffs, clamps, bilinear
//! cells) are skipped and counted.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fusion::{assemble, fuse_backward, FusionInputs, FusionMode, FusionRecord, GaussianGrads, GlobalGaussians};
use crate::geometry::{bind_one, bind_one_backward, triangle_frames, CloudGrads, GaussianCloud, TriMesh, TriangleFrame};
use crate::quat::{self, Quat};
use crate::raster::{render, render_backward, Camera, Image};
use crate::scene::{icosphere, pair_packed_uvs};
use crate::training::photometric_loss;
use crate::uvfield::{build_charts, BilinearTap, UVMap, UvChart};

/// Smallest denominator of the relative error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub step: f64,
}

impl SuiteReport {
    fn new(name: &'static str, tolerance: f64, step: f64) -> Self {
        SuiteReport {
            name,
            instances: 0,
            checked: 0,
            skipped: 0,
            failures: 0,
            max_rel_error: 0.0,
            tolerance,
            step,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    fn compare(&mut self, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if !(rel < self.tolerance) {
            self.failures += 1;
        }
        if rel > self.max_rel_error || rel.is_nan() {
            self.max_rel_error = rel;
        }
    }

    /// Checks one input. `eval(δ)` returns the loss with the input shifted by
    /// `δ`, or `None` when the shifted computation is structurally different.
    fn check(&mut self, analytic: f64, eval: impl Fn(f64) -> Option<f64>) {
        let h = self.step;
        let stable = eval(10.0 * h).is_some() && eval(-10.0 * h).is_some();
        match (stable, eval(h), eval(-h)) {
            (true, Some(p), Some(m)) => self.compare(analytic, (p - m) / (2.0 * h)),
            _ => self.skipped += 1,
        }
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<12} {} instances={} checked={} skipped={} failures={} max_rel={:.3e} tol={:.0e}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.instances,
            self.checked,
            self.skipped,
            self.failures,
            self.max_rel_error,
            self.tolerance
        )
    }
}

/// Every suite with `instances` random instances each.
pub fn run_all(seed: u64, instances: usize) -> Vec<SuiteReport> {
    vec![
        rasterizer(seed, instances),
        sampler(seed.wrapping_add(1), instances),
        fusion(seed.wrapping_add(2), instances),
        binding(seed.wrapping_add(3), instances),
        photometric(seed.wrapping_add(4), instances),
    ]
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    quat::normalize(&[
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ])
}

fn random_vec(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi))
}

/// Scalar loss `Σ w ⊙ I` of a rendered image.
fn weighted(img: &Image, w: &[f64]) -> f64 {
    img.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Mutable view of parameter `k` (0..14) of Gaussian `i`.
fn gaussian_param(g: &mut GlobalGaussians, i: usize, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.color[i][k],
        3 => &mut g.opacity[i],
        4..=6 => &mut g.mu[i][k - 4],
        7..=9 => &mut g.scale[i][k - 7],
        _ => &mut g.rot[i][k - 10],
    }
}

fn gaussian_grad(d: &GaussianGrads, i: usize, k: usize) -> f64 {
    match k {
        0..=2 => d.color[i][k],
        3 => d.opacity[i],
        4..=6 => d.mu[i][k - 4],
        7..=9 => d.scale[i][k - 7],
        _ => d.rot[i][k - 10],
    }
}

/// Colors, opacity, position, scale and rotation of five random Gaussians
/// in a 24×24 view.
pub fn rasterizer(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("rasterizer", 1e-3, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at(
        Vector3::new(0.0, 0.0, 3.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        30.0,
        24,
        24,
    );
    for _ in 0..instances {
        let mut g = GlobalGaussians::default();
        for _ in 0..5 {
            g.color.push([rng.gen(), rng.gen(), rng.gen()]);
            g.opacity.push(rng.gen_range(0.2..0.95));
            g.mu.push(random_vec(&mut rng, -0.6, 0.6));
            g.scale.push(random_vec(&mut rng, 0.08, 0.35));
            g.rot.push(random_quat(&mut rng));
        }
        let bg = [rng.gen(), rng.gen(), rng.gen()];
        let (img, graph) = render(&g, &cam, bg).expect("render");
        let w: Vec<f64> = (0..img.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = render_backward(&graph, &w).expect("backward");
        rep.instances += 1;
        for i in 0..5 {
            for k in 0..14 {
                rep.check(gaussian_grad(&d, i, k), |delta| {
                    let mut gp = g.clone();
                    *gaussian_param(&mut gp, i, k) += delta;
                    let (im, gr) = render(&gp, &cam, bg).ok()?;
                    gr.same_structure(&graph).then(|| weighted(&im, &w))
                });
            }
        }
    }
    rep
}

/// Bilinear lookups: every map entry and both uv coordinates.
pub fn sampler(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("sampler", 1e-4, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, c) = (5, 7, 3);
    for _ in 0..instances {
        let map = UVMap::from_data(w, h, c, (0..w * h * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .expect("map shape");
        let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let wts: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tap = BilinearTap::new(w, h, p).expect("finite uv");
        let mut d_map = UVMap::zeros(w, h, c);
        let d_p = tap.scatter(&map, &wts, Some(&mut d_map));
        let loss = |m: &UVMap, q: [f64; 2]| -> Option<f64> {
            let t = BilinearTap::new(w, h, q).ok()?;
            if t.texels != tap.texels {
                return None;
            }
            let mut out = vec![0.0; c];
            t.gather(m, &mut out);
            Some(out.iter().zip(&wts).map(|(a, b)| a * b).sum())
        };
        rep.instances += 1;
        for e in 0..map.data.len() {
            rep.check(d_map.data[e], |delta| {
                let mut m = map.clone();
                m.data[e] += delta;
                loss(&m, p)
            });
        }
        for a in 0..2 {
            rep.check(d_p[a], |delta| {
                let mut q = p;
                q[a] += delta;
                if !(0.0..=1.0).contains(&q[a]) {
                    return None;
                }
                loss(&map, q)
            });
        }
    }
    rep
}

struct FusionCase {
    cloud: GaussianCloud,
    frames: Vec<TriangleFrame>,
    charts: Vec<UvChart>,
    base: UVMap,
    residual: UVMap,
    deform: UVMap,
    weights: GaussianGrads,
    local_weights: CloudGrads,
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, amp: f64) -> UVMap {
    UVMap::from_data(w, h, c, (0..w * h * c).map(|_| rng.gen_range(-amp..amp)).collect()).expect("map shape")
}

impl FusionCase {
    fn random(rng: &mut ChaCha8Rng, rest: &TriMesh, rest_frames: &[TriangleFrame]) -> Self {
        let charts = build_charts(rest, rest_frames).expect("charts");
        let rot = quat::to_rotation(&random_quat(rng));
        let posed = rest.transformed(&rot, &random_vec(rng, -1.0, 1.0));
        let frames = triangle_frames(&posed).expect("frames");
        let nt = rest.triangles.len();
        let n = 12;
        let cloud = GaussianCloud {
            mu_l: (0..n).map(|_| random_vec(rng, -0.3, 0.3)).collect(),
            log_s_l: (0..n).map(|_| random_vec(rng, -2.0, -0.5)).collect(),
            r_l: (0..n).map(|_| random_quat(rng)).collect(),
            tri_index: (0..n).map(|_| rng.gen_range(0..nt)).collect(),
        };
        let mut deform = random_map(rng, 8, 8, 10, 0.05);
        // Keep r_l + Δr well away from zero.
        for v in deform.data.chunks_mut(10) {
            for x in &mut v[6..] {
                *x *= 0.5;
            }
        }
        let mut weights = GaussianGrads::zeros(n);
        let mut local_weights = CloudGrads::zeros(n);
        for i in 0..n {
            weights.color[i] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            weights.opacity[i] = rng.gen_range(-1.0..1.0);
            weights.mu[i] = random_vec(rng, -1.0, 1.0);
            weights.scale[i] = random_vec(rng, -1.0, 1.0);
            weights.rot[i] = [0.0; 4].map(|_: f64| rng.gen_range(-1.0..1.0));
            local_weights.mu_l[i] = random_vec(rng, -0.2, 0.2);
            local_weights.log_s_l[i] = random_vec(rng, -0.2, 0.2);
        }
        FusionCase {
            cloud,
            frames,
            charts,
            base: random_map(rng, 8, 8, 4, 1.0),
            residual: random_map(rng, 8, 8, 4, 1.0),
            deform,
            weights,
            local_weights,
        }
    }

    fn inputs<'a>(&self, base: &'a UVMap, residual: &'a UVMap, deform: &'a UVMap) -> FusionInputs<'a> {
        FusionInputs {
            base,
            residual: Some(residual),
            deform: Some(deform),
        }
    }

    /// Loss and record; the loss includes a linear term on the displaced
    /// local parameters, exercising the extra local-gradient input.
    fn loss(&self, cloud: &GaussianCloud, base: &UVMap, residual: &UVMap, deform: &UVMap) -> Option<(f64, FusionRecord)> {
        let (g, rec) = assemble(cloud, &self.frames, &self.charts, &self.inputs(base, residual, deform), FusionMode::Resample, true).ok()?;
        let w = &self.weights;
        let mut l = 0.0;
        for i in 0..g.len() {
            for k in 0..3 {
                l += g.color[i][k] * w.color[i][k];
            }
            l += g.opacity[i] * w.opacity[i];
            l += g.mu[i].dot(&w.mu[i]) + g.scale[i].dot(&w.scale[i]);
            for k in 0..4 {
                l += g.rot[i][k] * w.rot[i][k];
            }
            let r = &rec.gaussians[i];
            l += r.mu_l.dot(&self.local_weights.mu_l[i]) + r.log_s_l.dot(&self.local_weights.log_s_l[i]);
        }
        Some((l, rec))
    }
}

/// Same bilinear cells and clamp flags for every Gaussian.
fn same_fusion_structure(a: &FusionRecord, b: &FusionRecord, maps: (&UVMap, &UVMap, &UVMap)) -> bool {
    let cells = |m: &UVMap, p: [f64; 2]| BilinearTap::new(m.width, m.height, p).map(|t| t.texels).ok();
    a.gaussians.iter().zip(&b.gaussians).all(|(x, y)| {
        x.p_base.clamped == y.p_base.clamped
            && x.p_residual.clamped == y.p_residual.clamped
            && cells(maps.0, x.p_base.uv) == cells(maps.0, y.p_base.uv)
            && cells(maps.2, x.p_base.uv) == cells(maps.2, y.p_base.uv)
            && cells(maps.1, x.p_residual.uv) == cells(maps.1, y.p_residual.uv)
    })
}

/// Fused assembly: base, residual and deformation maps and the cloud.
pub fn fusion(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("fusion", 1e-4, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (verts, faces) = icosphere(0);
    let uvs = pair_packed_uvs(faces.len());
    let rest = TriMesh::new(verts, faces, uvs).expect("icosahedron");
    let rest_frames = triangle_frames(&rest).expect("frames");
    for _ in 0..instances {
        let case = FusionCase::random(&mut rng, &rest, &rest_frames);
        let Some((_, rec)) = case.loss(&case.cloud, &case.base, &case.residual, &case.deform) else {
            continue;
        };
        let inputs = case.inputs(&case.base, &case.residual, &case.deform);
        let Ok(d) = fuse_backward(&rec, &case.cloud, &case.frames, &case.charts, &inputs, &case.weights, Some(&case.local_weights)) else {
            continue;
        };
        rep.instances += 1;
        let maps = (&case.base, &case.residual, &case.deform);
        let eval = |cloud: &GaussianCloud, b: &UVMap, r: &UVMap, m: &UVMap| -> Option<f64> {
            let (l, rc) = case.loss(cloud, b, r, m)?;
            same_fusion_structure(&rec, &rc, maps).then_some(l)
        };
        // Map entries: a few random ones per map plus those under Gaussian 0.
        for (which, d_map) in [(0, &d.base), (1, d.residual.as_ref().expect("fused")), (2, d.deform.as_ref().expect("fused"))] {
            let len = d_map.data.len();
            for _ in 0..8 {
                let e = rng.gen_range(0..len);
                rep.check(d_map.data[e], |delta| {
                    let (mut b, mut r, mut m) = (case.base.clone(), case.residual.clone(), case.deform.clone());
                    [&mut b, &mut r, &mut m][which].data[e] += delta;
                    eval(&case.cloud, &b, &r, &m)
                });
            }
            let nonzero: Vec<usize> = (0..len).filter(|&e| d_map.data[e] != 0.0).take(8).collect();
            for e in nonzero {
                rep.check(d_map.data[e], |delta| {
                    let (mut b, mut r, mut m) = (case.base.clone(), case.residual.clone(), case.deform.clone());
                    [&mut b, &mut r, &mut m][which].data[e] += delta;
                    eval(&case.cloud, &b, &r, &m)
                });
            }
        }
        for i in 0..case.cloud.len() {
            for k in 0..10 {
                let analytic = match k {
                    0..=2 => d.cloud.mu_l[i][k],
                    3..=5 => d.cloud.log_s_l[i][k - 3],
                    _ => d.cloud.r_l[i][k - 6],
                };
                rep.check(analytic, |delta| {
                    let mut c = case.cloud.clone();
                    match k {
                        0..=2 => c.mu_l[i][k] += delta,
                        3..=5 => c.log_s_l[i][k - 3] += delta,
                        _ => c.r_l[i][k - 6] += delta,
                    }
                    eval(&c, &case.base, &case.residual, &case.deform)
                });
            }
        }
    }
    rep
}

/// Local-to-global binding of a single Gaussian on a random triangle.
pub fn binding(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("binding", 1e-5, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let corners = [0; 3].map(|_| random_vec(&mut rng, -1.0, 1.0));
        let Ok(mesh) = TriMesh::new(corners.to_vec(), vec![[0, 1, 2]], vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]) else {
            continue;
        };
        let Ok(frames) = triangle_frames(&mesh) else { continue };
        let frame = frames[0];
        let mu_l = random_vec(&mut rng, -1.0, 1.0);
        let ls = random_vec(&mut rng, -2.0, 0.0);
        let r = random_quat(&mut rng);
        let (wm, ws) = (random_vec(&mut rng, -1.0, 1.0), random_vec(&mut rng, -1.0, 1.0));
        let wr: Quat = [0.0; 4].map(|_: f64| rng.gen_range(-1.0..1.0));
        let loss = |m: &Vector3<f64>, s: &Vector3<f64>, q: &Quat| {
            let (a, b, c) = bind_one(&frame, m, s, q);
            a.dot(&wm) + b.dot(&ws) + (0..4).map(|k| c[k] * wr[k]).sum::<f64>()
        };
        let (dm, ds, dr) = bind_one_backward(&frame, &ls, &r, &wm, &ws, &wr);
        rep.instances += 1;
        for k in 0..3 {
            rep.check(dm[k], |d| {
                let mut m = mu_l;
                m[k] += d;
                Some(loss(&m, &ls, &r))
            });
            rep.check(ds[k], |d| {
                let mut s = ls;
                s[k] += d;
                Some(loss(&mu_l, &s, &r))
            });
        }
        for k in 0..4 {
            rep.check(dr[k], |d| {
                let mut q = r;
                q[k] += d;
                Some(loss(&mu_l, &ls, &q))
            });
        }
    }
    rep
}

/// Photometric loss on 16×16 random image pairs.
pub fn photometric(seed: u64, instances: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("photometric", 1e-4, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let mut random = || Image::from_data(16, 16, (0..768).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("shape");
        let (x, y) = (random(), random());
        let (_, g) = photometric_loss(&x, &y, 0.8).expect("loss");
        rep.instances += 1;
        for _ in 0..10 {
            let e = rng.gen_range(0..768);
            rep.check(g[e], |d| {
                let mut p = x.clone();
                p.data[e] += d;
                // The L1 term kinks where the pixel meets the target.
                ((p.data[e] - y.data[e]).signum() == (x.data[e] - y.data[e]).signum())
                    .then(|| photometric_loss(&p, &y, 0.8).map(|r| r.0).ok())
                    .flatten()
            });
        }
    }
    rep
}

/// Random proper rotation.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    quat::to_rotation(&random_quat(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_a_few_instances() {
        for rep in run_all(11, 5) {
            assert!(rep.passed(), "{rep}");
            assert!(rep.checked > rep.skipped, "{rep}");
        }
    }
}
