use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::composite::evaluate;
use super::{RenderGraph, Splat2D};
use crate::error::{check_len, Result};
use crate::fusion::GaussianGrads;
use crate::quat;

/// Screen-space gradients of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2D {
    mean: Vector2<f64>,
    /// dL/d conic, as a full symmetric matrix.
    conic: Matrix2<f64>,
    color: [f64; 3],
    opacity: f64,
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        self.mean += o.mean;
        self.conic += o.conic;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.opacity += o.opacity;
    }
}

/// Adjoint of project∘composite. `d_image` has the image layout. Sorting
/// and culling are treated as constants.
pub fn render_backward(graph: &RenderGraph, d_image: &[f64]) -> Result<GaussianGrads> {
    let cam = &graph.camera;
    check_len("image gradient", cam.width * cam.height * 3, d_image.len())?;
    let tiles_x = graph.tiles_x();
    let ts = graph.tile_size;

    // Per-tile partial sums, reduced below in tile order so the result does
    // not depend on scheduling.
    let partials: Vec<Vec<(usize, Grad2D)>> = graph
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            if list.is_empty() {
                return Vec::new();
            }
            let mut lookup: Vec<(usize, usize)> = list.iter().enumerate().map(|(l, &s)| (s, l)).collect();
            lookup.sort_unstable();
            let local = |s: usize| lookup[lookup.binary_search_by_key(&s, |e| e.0).unwrap()].1;
            let mut acc = vec![Grad2D::default(); list.len()];
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            for py in ty * ts..((ty + 1) * ts).min(cam.height) {
                for px in tx * ts..((tx + 1) * ts).min(cam.width) {
                    let p = py * cam.width + px;
                    let dc = &d_image[p * 3..p * 3 + 3];
                    if dc.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    pixel_backward(graph, p, px, py, dc, &mut acc, &local);
                }
            }
            list.iter().zip(acc).map(|(&s, g)| (s, g)).collect()
        })
        .collect();

    let mut screen = vec![Grad2D::default(); graph.splats.len()];
    for tile in &partials {
        for (s, g) in tile {
            screen[*s].add(g);
        }
    }

    let n = graph.num_gaussians;
    let mut grads = GaussianGrads::zeros(n);
    let per_splat: Vec<(Vector3<f64>, Vector3<f64>, quat::Quat)> = graph
        .splats
        .par_iter()
        .zip(&screen)
        .map(|(sp, g)| splat_backward(graph, sp, g))
        .collect();
    for ((sp, g), (d_mu, d_s, d_r)) in graph.splats.iter().zip(&screen).zip(per_splat) {
        let i = sp.index;
        grads.color[i] = g.color;
        grads.opacity[i] = g.opacity;
        grads.mu[i] = d_mu;
        grads.scale[i] = d_s;
        grads.rot[i] = d_r;
    }
    Ok(grads)
}

fn pixel_backward(
    graph: &RenderGraph,
    p: usize,
    px: usize,
    py: usize,
    dc: &[f64],
    acc: &mut [Grad2D],
    local: &impl Fn(usize) -> usize,
) {
    let center = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
    let bg = graph.background;
    let tf = graph.t_final[p];
    // Color accumulated behind the current splat, including the background.
    let mut after = [bg[0] * tf, bg[1] * tf, bg[2] * tf];
    for c in graph.pixel(p).iter().rev() {
        let sp = &graph.splats[c.splat];
        let g = &mut acc[local(c.splat)];
        let weight = c.alpha * c.t_before;
        let mut d_alpha = 0.0;
        for ch in 0..3 {
            g.color[ch] += weight * dc[ch];
            d_alpha += dc[ch] * (sp.color[ch] * c.t_before - after[ch] / (1.0 - c.alpha));
            after[ch] += sp.color[ch] * weight;
        }
        if c.clamped {
            continue;
        }
        let (_, _, gauss, d) = evaluate(sp, &center).expect("recorded contribution re-evaluates");
        g.opacity += d_alpha * gauss;
        let dq = -0.5 * d_alpha * sp.opacity * gauss;
        g.conic += d * d.transpose() * dq;
        // q = dᵀ A d with d = center - mean.
        g.mean -= sp.conic * d * (2.0 * dq);
    }
}

fn splat_backward(graph: &RenderGraph, sp: &Splat2D, g: &Grad2D) -> (Vector3<f64>, Vector3<f64>, quat::Quat) {
    let cam = &graph.camera;
    let a = &sp.conic;
    let g_cov = -(a * g.conic * a);
    let j = &sp.jacobian;
    let g_cov_cam: Matrix3<f64> = j.transpose() * g_cov * j;
    let g_j: Matrix2x3<f64> = g_cov * j * sp.cov_cam * 2.0;
    let w = &cam.rotation;
    let g_cov_world = w.transpose() * g_cov_cam * w;
    let g_m = g_cov_world * sp.m * 2.0;
    let g_rot = g_m * Matrix3::from_diagonal(&sp.scale);
    let mut d_s = Vector3::zeros();
    for i in 0..3 {
        d_s[i] = sp.rot.column(i).dot(&g_m.column(i));
    }
    let d_r = quat::to_rotation_backward(&sp.quat, &g_rot);

    let (x, y, z) = (sp.t.x, sp.t.y, sp.t.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_t = Vector3::new(
        fx / z * g.mean.x,
        fy / z * g.mean.y,
        -fx * x / z2 * g.mean.x - fy * y / z2 * g.mean.y,
    );
    d_t.x += g_j[(0, 2)] * (-fx / z2);
    d_t.y += g_j[(1, 2)] * (-fy / z2);
    d_t.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    (w.transpose() * d_t, d_s, d_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::GlobalGaussians;
    use crate::raster::{render, Camera};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cam = Camera::look_at(
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            30.0,
            16,
            16,
        );
        let mut g = GlobalGaussians::default();
        for _ in 0..5 {
            g.color.push([rng.gen(), rng.gen(), rng.gen()]);
            g.opacity.push(rng.gen_range(0.2..0.9));
            g.mu.push(Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0));
            g.scale.push(Vector3::repeat(0.2));
            g.rot.push(quat::IDENTITY);
        }
        let (img, graph) = render(&g, &cam, [0.0; 3]).unwrap();
        let grads = render_backward(&graph, &vec![0.0; img.data.len()]).unwrap();
        assert_eq!(grads, GaussianGrads::zeros(5));
    }
}
