use nalgebra::Vector2;
use rayon::prelude::*;

use super::{Camera, Image, Splat2D, ALPHA_MAX, ALPHA_MIN, CUTOFF_SQ};
use crate::error::{Error, Result};

pub const DEFAULT_TILE: usize = 16;

/// One splat's contribution to one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Position in [`RenderGraph::splats`].
    pub splat: usize,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub t_before: f64,
    /// Whether `alpha` hit [`ALPHA_MAX`].
    pub clamped: bool,
}

/// Everything the backward pass needs from one forward render.
#[derive(Debug, Clone)]
pub struct RenderGraph {
    pub camera: Camera,
    pub background: [f64; 3],
    pub tile_size: usize,
    pub num_gaussians: usize,
    pub splats: Vec<Splat2D>,
    /// Contributions of pixel `p` are `contributions[offsets[p]..offsets[p + 1]]`.
    pub offsets: Vec<usize>,
    pub contributions: Vec<Contribution>,
    pub t_final: Vec<f64>,
    /// Splat positions per tile in depth order.
    pub(crate) tiles: Vec<Vec<usize>>,
}

impl RenderGraph {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.contributions[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn tiles_x(&self) -> usize {
        self.camera.width.div_ceil(self.tile_size)
    }

    /// True when both renders touch the same pixels with the same splats in
    /// the same order and with the same clamp decisions.
    pub fn same_structure(&self, other: &RenderGraph) -> bool {
        if self.offsets != other.offsets {
            return false;
        }
        self.contributions.iter().zip(&other.contributions).all(|(a, b)| {
            self.splats[a.splat].index == other.splats[b.splat].index && a.clamped == b.clamped
        })
    }
}

/// Evaluates a splat at a pixel center: `Some((alpha, clamped, gaussian))`
/// when it contributes, where `gaussian = exp(-q/2)`.
#[inline]
pub(crate) fn evaluate(splat: &Splat2D, center: &Vector2<f64>) -> Option<(f64, bool, f64, Vector2<f64>)> {
    let d = center - splat.mean;
    if d.x.abs() > splat.extent[0] || d.y.abs() > splat.extent[1] {
        return None;
    }
    let c = &splat.conic;
    let q = c[(0, 0)] * d.x * d.x + 2.0 * c[(0, 1)] * d.x * d.y + c[(1, 1)] * d.y * d.y;
    if q > CUTOFF_SQ {
        return None;
    }
    let g = (-0.5 * q).exp();
    let raw = splat.opacity * g;
    let (alpha, clamped) = if raw > ALPHA_MAX { (ALPHA_MAX, true) } else { (raw, false) };
    if alpha < ALPHA_MIN {
        return None;
    }
    Some((alpha, clamped, g, d))
}

fn bin_splats(splats: &[Splat2D], order: &[usize], camera: &Camera, tile: usize) -> Vec<Vec<usize>> {
    let tiles_x = camera.width.div_ceil(tile);
    let tiles_y = camera.height.div_ceil(tile);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for &s in order {
        let sp = &splats[s];
        // Pixel centers sit at px + 0.5, so the covered pixel range is
        // ceil(lo - 0.5) ..= floor(hi - 0.5).
        let lo_x = (sp.mean.x - sp.extent[0] - 0.5).ceil().max(0.0);
        let hi_x = (sp.mean.x + sp.extent[0] - 0.5).floor().min(camera.width as f64 - 1.0);
        let lo_y = (sp.mean.y - sp.extent[1] - 0.5).ceil().max(0.0);
        let hi_y = (sp.mean.y + sp.extent[1] - 0.5).floor().min(camera.height as f64 - 1.0);
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            continue;
        }
        // Widen by one pixel so that rounding in the bounds above can never
        // drop a pixel the per-pixel test would accept.
        let px0 = (lo_x as usize).saturating_sub(1);
        let px1 = (hi_x as usize + 1).min(camera.width - 1);
        let py0 = (lo_y as usize).saturating_sub(1);
        let py1 = (hi_y as usize + 1).min(camera.height - 1);
        for ty in py0 / tile..=py1 / tile {
            for tx in px0 / tile..=px1 / tile {
                tiles[ty * tiles_x + tx].push(s);
            }
        }
    }
    tiles
}

struct PixelOut {
    pixel: usize,
    color: [f64; 3],
    t_final: f64,
    list: Vec<Contribution>,
}

/// Depth-sorts, bins and alpha-composites `splats` front to back.
pub fn composite(
    splats: Vec<Splat2D>,
    camera: &Camera,
    background: [f64; 3],
    tile_size: usize,
) -> Result<(Image, RenderGraph)> {
    if tile_size == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    for s in &splats {
        if !(s.cov.determinant() > 0.0) {
            return Err(Error::SingularCovariance(s.index));
        }
    }
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].index.cmp(&splats[b].index))
    });
    let tiles = bin_splats(&splats, &order, camera, tile_size);
    let tiles_x = camera.width.div_ceil(tile_size);
    let (w, h) = (camera.width, camera.height);

    let per_tile: Vec<Vec<PixelOut>> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let mut out = Vec::with_capacity(tile_size * tile_size);
            for py in ty * tile_size..((ty + 1) * tile_size).min(h) {
                for px in tx * tile_size..((tx + 1) * tile_size).min(w) {
                    let center = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let mut t = 1.0;
                    let mut color = [0.0; 3];
                    let mut contribs = Vec::new();
                    for &s in list {
                        let sp = &splats[s];
                        let Some((alpha, clamped, _, _)) = evaluate(sp, &center) else {
                            continue;
                        };
                        for c in 0..3 {
                            color[c] += sp.color[c] * alpha * t;
                        }
                        contribs.push(Contribution {
                            splat: s,
                            alpha,
                            t_before: t,
                            clamped,
                        });
                        t *= 1.0 - alpha;
                    }
                    for c in 0..3 {
                        color[c] += background[c] * t;
                    }
                    out.push(PixelOut {
                        pixel: py * w + px,
                        color,
                        t_final: t,
                        list: contribs,
                    });
                }
            }
            out
        })
        .collect();

    let mut image = Image::filled(w, h, [0.0; 3]);
    let mut t_final = vec![1.0; w * h];
    let mut lists: Vec<Vec<Contribution>> = vec![Vec::new(); w * h];
    for tile in per_tile {
        for p in tile {
            image.data[p.pixel * 3..p.pixel * 3 + 3].copy_from_slice(&p.color);
            t_final[p.pixel] = p.t_final;
            lists[p.pixel] = p.list;
        }
    }
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut contributions = Vec::new();
    offsets.push(0);
    for list in lists {
        contributions.extend(list);
        offsets.push(contributions.len());
    }
    let num_gaussians = splats.iter().map(|s| s.index + 1).max().unwrap_or(0);
    Ok((
        image,
        RenderGraph {
            camera: camera.clone(),
            background,
            tile_size,
            num_gaussians,
            splats,
            offsets,
            contributions,
            t_final,
            tiles,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::GlobalGaussians;
    use crate::quat;
    use crate::raster::project;
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera(w: usize, h: usize) -> Camera {
        Camera {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            fx: 40.0,
            fy: 40.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        }
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GlobalGaussians {
        let mut g = GlobalGaussians::default();
        for _ in 0..n {
            g.color.push([rng.gen(), rng.gen(), rng.gen()]);
            g.opacity.push(rng.gen_range(0.05..1.0));
            g.mu.push(Vector3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(2.0..4.0),
            ));
            g.scale.push(Vector3::new(
                rng.gen_range(0.03..0.25),
                rng.gen_range(0.03..0.25),
                rng.gen_range(0.03..0.25),
            ));
            g.rot.push(quat::normalize(&[
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]));
        }
        g
    }

    #[test]
    fn empty_scene_is_background() {
        let cam = camera(8, 8);
        let (img, _) = composite(Vec::new(), &cam, [0.2, 0.4, 0.6], 16).unwrap();
        for p in img.data.chunks(3) {
            assert_eq!(p, &[0.2, 0.4, 0.6]);
        }
    }

    #[test]
    fn saturated_splat_at_pixel_center() {
        let cam = Camera { cx: 4.5, cy: 4.5, ..camera(8, 8) };
        let g = GlobalGaussians {
            color: vec![[1.0, 0.5, 0.0]],
            opacity: vec![1.0],
            mu: vec![Vector3::new(0.0, 0.0, 2.0)],
            scale: vec![Vector3::repeat(0.05)],
            rot: vec![quat::IDENTITY],
        };
        let bg = [0.0, 0.0, 1.0];
        let (img, graph) = composite(project(&g, &cam).unwrap(), &cam, bg, 16).unwrap();
        let p = img.pixel(4, 4);
        for c in 0..3 {
            assert!((p[c] - (0.99 * g.color[0][c] + 0.01 * bg[c])).abs() < 1e-15);
        }
        assert!(graph.pixel(4 * 8 + 4)[0].clamped);
    }

    fn brute_force(g: &GlobalGaussians, cam: &Camera, bg: [f64; 3]) -> Image {
        let splats = project(g, cam).unwrap();
        let mut order: Vec<&Splat2D> = splats.iter().collect();
        order.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
        let mut img = Image::filled(cam.width, cam.height, [0.0; 3]);
        for py in 0..cam.height {
            for px in 0..cam.width {
                let center = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                let mut terms = Vec::new();
                for s in &order {
                    if let Some((alpha, ..)) = evaluate(s, &center) {
                        terms.push((s.color, alpha));
                    }
                }
                let i = (py * cam.width + px) * 3;
                for c in 0..3 {
                    let mut v = 0.0;
                    for (k, (color, alpha)) in terms.iter().enumerate() {
                        let trans: f64 = terms[..k].iter().map(|(_, a)| 1.0 - a).product();
                        v += color[c] * alpha * trans;
                    }
                    let trans: f64 = terms.iter().map(|(_, a)| 1.0 - a).product();
                    img.data[i + c] = v + bg[c] * trans;
                }
            }
        }
        img
    }

    #[test]
    fn two_splats_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cam = camera(16, 16);
        for _ in 0..10 {
            let (o1, o2) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
            let g = GlobalGaussians {
                color: vec![[0.9, 0.1, 0.2], [0.1, 0.8, 0.3]],
                opacity: vec![o1, o2],
                mu: vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 3.0)],
                scale: vec![Vector3::repeat(0.3); 2],
                rot: vec![quat::IDENTITY; 2],
            };
            let bg = [0.3, 0.3, 0.3];
            let splats = project(&g, &cam).unwrap();
            let center = Vector2::new(8.5, 8.5);
            let a1 = evaluate(&splats[0], &center).unwrap().0;
            let a2 = evaluate(&splats[1], &center).unwrap().0;
            let (img, _) = composite(splats, &cam, bg, 16).unwrap();
            let p = img.pixel(8, 8);
            for c in 0..3 {
                let expect = g.color[0][c] * a1 + g.color[1][c] * a2 * (1.0 - a1) + bg[c] * (1.0 - a1) * (1.0 - a2);
                assert!((p[c] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_brute_force_and_is_tile_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = camera(37, 29);
        for _ in 0..5 {
            let g = random_scene(&mut rng, 40);
            let bg = [0.1, 0.2, 0.3];
            let (tiled, graph) = composite(project(&g, &cam).unwrap(), &cam, bg, 16).unwrap();
            let (whole, _) = composite(project(&g, &cam).unwrap(), &cam, bg, 64).unwrap();
            let (tiny, _) = composite(project(&g, &cam).unwrap(), &cam, bg, 3).unwrap();
            let brute = brute_force(&g, &cam, bg);
            for i in 0..tiled.data.len() {
                assert!((tiled.data[i] - whole.data[i]).abs() < 1e-12);
                assert!((tiled.data[i] - tiny.data[i]).abs() < 1e-12);
                assert!((tiled.data[i] - brute.data[i]).abs() < 1e-12);
                assert!(tiled.data[i] >= 0.0 && tiled.data[i] <= 1.0);
            }
            for p in 0..cam.width * cam.height {
                let list = graph.pixel(p);
                for w in list.windows(2) {
                    assert!(w[1].t_before < w[0].t_before);
                }
                assert!(list.iter().all(|c| c.alpha > 0.0 && c.alpha <= ALPHA_MAX));
            }
        }
    }
}
