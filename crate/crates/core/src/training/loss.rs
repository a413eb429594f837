//! Photometric loss (L1 + SSIM), geometric hinge regularizers and image
//! quality metrics.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `C1 = 0.01²`, `C2 = 0.03²`
//! for a data range of 1, population (biased) variances, and averages the
//! per-window index over every window that fits entirely inside the image and
//! over the three channels.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - r;
        *v = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable correlation over valid window positions of one `h × w` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + j];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-size map back to `h × w`.
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for (j, kv) in k.iter().enumerate() {
                rows[(y + j) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (j, kv) in k.iter().enumerate() {
                out[y * w + x + j] += kv * v;
            }
        }
    }
    out
}

fn check_images(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM, and optionally its gradient w.r.t. `x`.
fn ssim_impl(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_images(x, y)?;
    let (w, h) = (x.width, x.height);
    let k = window();
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; x.data.len()]);
    for c in 0..3 {
        let xp = plane(x, c);
        let yp = plane(y, c);
        let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(&yp).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&xp, w, h, &k);
        let my = filter_valid(&yp, w, h, &k);
        let exx = filter_valid(&xx, w, h, &k);
        let eyy = filter_valid(&yy, w, h, &k);
        let exy = filter_valid(&xy, w, h, &k);
        let n = mx.len();
        let (mut g_mx, mut g_exx, mut g_exy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * cxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = vx + vy + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d_ux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
                let d_vx = -s / b2;
                let d_cxy = 2.0 * a1 / (b1 * b2);
                g_mx[i] = (d_ux - 2.0 * ux * d_vx - uy * d_cxy) / count;
                g_exx[i] = d_vx / count;
                g_exy[i] = d_cxy / count;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let a = filter_valid_adjoint(&g_mx, w, h, &k);
            let b = filter_valid_adjoint(&g_exx, w, h, &k);
            let d = filter_valid_adjoint(&g_exy, w, h, &k);
            for p in 0..w * h {
                grad[p * 3 + c] = a[p] + 2.0 * xp[p] * b[p] + yp[p] * d[p];
            }
        }
    }
    Ok((total / count, grad))
}

pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    Ok(ssim_impl(x, y, false)?.0)
}

/// SSIM and dSSIM/dx.
pub fn ssim_with_grad(x: &Image, y: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_impl(x, y, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// `λ·mean|I − I_gt| + (1 − λ)·(1 − SSIM(I, I_gt))` and its image gradient.
pub fn photometric_loss(img: &Image, gt: &Image, lambda_l1: f64) -> Result<(f64, Vec<f64>)> {
    check_images(img, gt)?;
    let n = img.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = vec![0.0; img.data.len()];
    for (i, (a, b)) in img.data.iter().zip(&gt.data).enumerate() {
        let d = a - b;
        l1 += d.abs();
        grad[i] = lambda_l1 * d.signum() * f64::from(u8::from(d != 0.0)) / n;
    }
    l1 /= n;
    let (s, ds) = ssim_with_grad(img, gt)?;
    for (g, d) in grad.iter_mut().zip(&ds) {
        *g -= (1.0 - lambda_l1) * d;
    }
    Ok((lambda_l1 * l1 + (1.0 - lambda_l1) * (1.0 - s), grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub l1: f64,
    /// `+∞` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

pub fn eval_metrics(img: &Image, gt: &Image) -> Result<Metrics> {
    check_images(img, gt)?;
    let n = img.data.len() as f64;
    let mut l1 = 0.0;
    let mut mse = 0.0;
    for (a, b) in img.data.iter().zip(&gt.data) {
        l1 += (a - b).abs();
        mse += (a - b) * (a - b);
    }
    l1 /= n;
    mse /= n;
    let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    Ok(Metrics {
        l1,
        psnr,
        ssim: ssim(img, gt)?,
    })
}

/// `‖max(‖μ_i‖ − ε, 0)‖₂` over all Gaussians, with its gradient.
pub fn xyz_hinge(mu_l: &[Vector3<f64>], eps: f64) -> (f64, Vec<Vector3<f64>>) {
    let hinge: Vec<f64> = mu_l.iter().map(|m| (m.norm() - eps).max(0.0)).collect();
    let loss = hinge.iter().map(|h| h * h).sum::<f64>().sqrt();
    let grad = mu_l
        .iter()
        .zip(&hinge)
        .map(|(m, h)| {
            if loss > 0.0 && *h > 0.0 {
                m / m.norm() * (h / loss)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    (loss, grad)
}

/// `‖max(exp(s_ik) − ε, 0)‖₂` over all Gaussians and axes, with its gradient.
pub fn scale_hinge(log_s_l: &[Vector3<f64>], eps: f64) -> (f64, Vec<Vector3<f64>>) {
    let hinge: Vec<Vector3<f64>> = log_s_l.iter().map(|s| s.map(|v| (v.exp() - eps).max(0.0))).collect();
    let loss = hinge.iter().map(|h| h.norm_squared()).sum::<f64>().sqrt();
    let grad = log_s_l
        .iter()
        .zip(&hinge)
        .map(|(s, h)| {
            if loss > 0.0 {
                Vector3::from_fn(|k, _| if h[k] > 0.0 { h[k] / loss * s[k].exp() } else { 0.0 })
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 16, 16);
        let (loss, grad) = photometric_loss(&a, &a, 0.8).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
        let m = eval_metrics(&a, &a).unwrap();
        assert_eq!(m.l1, 0.0);
        assert_eq!(m.ssim, 1.0);
        assert!(m.psnr.is_infinite());
    }

    #[test]
    fn uniform_offset_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut gt = random_image(&mut rng, 16, 16);
        for v in &mut gt.data {
            *v *= 0.8;
        }
        let mut img = gt.clone();
        for v in &mut img.data {
            *v += 0.1;
        }
        let m = eval_metrics(&img, &gt).unwrap();
        assert!((m.l1 - 0.1).abs() < 1e-12);
        assert!((m.psnr - 20.0).abs() < 1e-9);
    }

    #[test]
    fn small_images_are_rejected() {
        let a = Image::filled(8, 8, [0.0; 3]);
        assert!(ssim(&a, &a).is_err());
        let b = Image::filled(16, 16, [0.0; 3]);
        let c = Image::filled(16, 17, [0.0; 3]);
        assert!(photometric_loss(&b, &c, 0.8).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 16, 16);
        let y = random_image(&mut rng, 16, 16);
        let (_, g) = photometric_loss(&x, &y, 0.8).unwrap();
        let h = 1e-5;
        for i in (0..x.data.len()).step_by(7) {
            if (x.data[i] - y.data[i]).abs() < 10.0 * h {
                continue;
            }
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let numeric = (photometric_loss(&p, &y, 0.8).unwrap().0 - photometric_loss(&m, &y, 0.8).unwrap().0) / (2.0 * h);
            let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "pixel {i}: {} vs {numeric}", g[i]);
        }
    }

    #[test]
    fn hinges() {
        let (l, g) = xyz_hinge(&[Vector3::new(3.0, 0.0, 0.0), Vector3::new(0.5, 0.5, 0.0)], 2.0);
        assert_eq!(l, 1.0);
        assert_eq!(g[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(g[1], Vector3::zeros());
        let (l, _) = scale_hinge(&[Vector3::repeat(0.5f64.ln())], 0.6);
        assert_eq!(l, 0.0);
        let (l, _) = scale_hinge(&[Vector3::new(1.0f64.ln(), 0.0, 0.6f64.ln())], 0.6);
        // exp = (1, 1, 0.6): hinges (0.4, 0.4, 0).
        assert!((l - (0.32f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hinge_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu: Vec<Vector3<f64>> = (0..6)
            .map(|_| Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let ls: Vec<Vector3<f64>> = (0..6)
            .map(|_| Vector3::new(rng.gen_range(-1.5..0.5), rng.gen_range(-1.5..0.5), rng.gen_range(-1.5..0.5)))
            .collect();
        let (_, gm) = xyz_hinge(&mu, 2.0);
        let (_, gs) = scale_hinge(&ls, 0.6);
        let h = 1e-6;
        for i in 0..6 {
            for k in 0..3 {
                let (mut p, mut m) = (mu.clone(), mu.clone());
                p[i][k] += h;
                m[i][k] -= h;
                if ((p[i].norm() - 2.0) * (m[i].norm() - 2.0)) <= 0.0 {
                    continue;
                }
                let n = (xyz_hinge(&p, 2.0).0 - xyz_hinge(&m, 2.0).0) / (2.0 * h);
                assert!((n - gm[i][k]).abs() / n.abs().max(gm[i][k].abs()).max(1e-6) < 1e-6);
                let (mut p, mut m) = (ls.clone(), ls.clone());
                p[i][k] += h;
                m[i][k] -= h;
                let n = (scale_hinge(&p, 0.6).0 - scale_hinge(&m, 0.6).0) / (2.0 * h);
                assert!((n - gs[i][k]).abs() / n.abs().max(gs[i][k].abs()).max(1e-6) < 1e-6);
            }
        }
    }
}
