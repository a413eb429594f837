//! Periodic pruning, cloning and splitting of the bound cloud.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::geometry::{CloudGrads, GaussianCloud};
use crate::quat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensifyConfig {
    /// Gaussians whose base opacity falls below this are removed.
    pub prune_opacity: f64,
    /// Mean local position-gradient norm above which small Gaussians clone.
    pub grad_threshold: f64,
    /// Gaussians with a larger local scale on any axis split.
    pub split_scale: f64,
    /// Radius of the local-space jitter applied to clones.
    pub clone_jitter: f64,
    /// Scale divisor of split children.
    pub split_factor: f64,
    /// Hard cap on the cloud size; growth stops once reached.
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            prune_opacity: 0.05,
            grad_threshold: 2e-3,
            split_scale: 0.6,
            clone_jitter: 0.01,
            split_factor: 1.6,
            max_gaussians: 4096,
        }
    }
}

/// Accumulated `‖∂L/∂μ_l‖` per Gaussian since the last densification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, grads: &CloudGrads) {
        for (i, g) in grads.mu_l.iter().enumerate() {
            self.grad_sum[i] += g.norm();
            self.count[i] += 1;
        }
    }

    fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub cloud: GaussianCloud,
    /// For each new Gaussian, the old index whose optimizer state it keeps;
    /// `None` for newly created Gaussians.
    pub source: Vec<Option<usize>>,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
}

/// Prunes, then clones and splits the survivors. Every triangle keeps at
/// least one Gaussian.
pub fn densify_and_prune(
    cloud: &GaussianCloud,
    stats: &DensifyStats,
    base_opacity: &[f64],
    num_triangles: usize,
    cfg: &DensifyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DensifyOutcome> {
    let n = cloud.len();
    check_len("densify opacities", n, base_opacity.len())?;
    check_len("densify statistics", n, stats.grad_sum.len())?;
    cloud.validate(num_triangles)?;

    // Strongest Gaussian per triangle survives regardless of opacity.
    let mut keeper: Vec<Option<usize>> = vec![None; num_triangles];
    for i in 0..n {
        let t = cloud.tri_index[i];
        match keeper[t] {
            Some(k) if base_opacity[k] >= base_opacity[i] => {}
            _ => keeper[t] = Some(i),
        }
    }
    let keep: Vec<bool> = (0..n)
        .map(|i| base_opacity[i] >= cfg.prune_opacity || keeper[cloud.tri_index[i]] == Some(i))
        .collect();
    let pruned = keep.iter().filter(|k| !**k).count();

    let mut out = GaussianCloud {
        mu_l: Vec::new(),
        log_s_l: Vec::new(),
        r_l: Vec::new(),
        tri_index: Vec::new(),
    };
    let mut source = Vec::new();
    let mut extra = GaussianCloud {
        mu_l: Vec::new(),
        log_s_l: Vec::new(),
        r_l: Vec::new(),
        tri_index: Vec::new(),
    };
    let (mut cloned, mut split) = (0, 0);
    let survivors = n - pruned;
    let mut budget = cfg.max_gaussians.saturating_sub(survivors);
    let shrink = cfg.split_factor.ln();

    for i in (0..n).filter(|&i| keep[i]) {
        let (mu, ls, r, t) = (cloud.mu_l[i], cloud.log_s_l[i], cloud.r_l[i], cloud.tri_index[i]);
        let scales = ls.map(f64::exp);
        let (major, max_scale) = scales.argmax();
        if max_scale > cfg.split_scale && budget > 0 {
            budget -= 1;
            split += 1;
            let axis = quat::to_rotation(&r).column(major).into_owned();
            let offset = axis * (0.5 * max_scale);
            let child_ls = ls - Vector3::repeat(shrink);
            out.mu_l.push(mu + offset);
            out.log_s_l.push(child_ls);
            out.r_l.push(r);
            out.tri_index.push(t);
            source.push(None);
            extra.mu_l.push(mu - offset);
            extra.log_s_l.push(child_ls);
            extra.r_l.push(r);
            extra.tri_index.push(t);
            continue;
        }
        out.mu_l.push(mu);
        out.log_s_l.push(ls);
        out.r_l.push(r);
        out.tri_index.push(t);
        source.push(Some(i));
        if stats.mean(i) > cfg.grad_threshold && budget > 0 {
            budget -= 1;
            cloned += 1;
            let jitter = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * cfg.clone_jitter;
            extra.mu_l.push(mu + jitter);
            extra.log_s_l.push(ls);
            extra.r_l.push(r);
            extra.tri_index.push(t);
        }
    }
    source.extend(std::iter::repeat_n(None, extra.len()));
    out.mu_l.extend(extra.mu_l);
    out.log_s_l.extend(extra.log_s_l);
    out.r_l.extend(extra.r_l);
    out.tri_index.extend(extra.tri_index);
    Ok(DensifyOutcome {
        cloud: out,
        source,
        pruned,
        cloned,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn quiet_cloud_is_unchanged() {
        let cloud = GaussianCloud::one_per_triangle(4);
        let stats = DensifyStats::new(4);
        let out = densify_and_prune(&cloud, &stats, &[0.5; 4], 4, &DensifyConfig::default(), &mut rng()).unwrap();
        assert_eq!(out.cloud, cloud);
        assert_eq!(out.source, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn transparent_gaussian_on_shared_triangle_is_pruned() {
        let mut cloud = GaussianCloud::one_per_triangle(2);
        cloud.mu_l.push(Vector3::new(0.1, 0.0, 0.0));
        cloud.log_s_l.push(cloud.log_s_l[0]);
        cloud.r_l.push(quat::IDENTITY);
        cloud.tri_index.push(0);
        let out = densify_and_prune(&cloud, &DensifyStats::new(3), &[0.5, 0.5, 0.01], 2, &DensifyConfig::default(), &mut rng())
            .unwrap();
        assert_eq!(out.cloud.len(), 2);
        assert_eq!(out.pruned, 1);
    }

    #[test]
    fn last_gaussian_of_a_triangle_survives() {
        let cloud = GaussianCloud::one_per_triangle(3);
        let out = densify_and_prune(&cloud, &DensifyStats::new(3), &[0.01, 0.02, 0.5], 3, &DensifyConfig::default(), &mut rng())
            .unwrap();
        assert_eq!(out.cloud, cloud);
    }

    #[test]
    fn split_children_inherit_binding() {
        let mut cloud = GaussianCloud::one_per_triangle(3);
        cloud.log_s_l[1] = Vector3::new(1.0f64.ln(), 0.3f64.ln(), 0.3f64.ln());
        let out = densify_and_prune(&cloud, &DensifyStats::new(3), &[0.5; 3], 3, &DensifyConfig::default(), &mut rng()).unwrap();
        assert_eq!(out.split, 1);
        assert_eq!(out.cloud.len(), 4);
        assert_eq!(out.cloud.tri_index, vec![0, 1, 2, 1]);
        assert_eq!(out.source, vec![Some(0), None, Some(2), None]);
        assert!((out.cloud.mu_l[1].x - 0.5).abs() < 1e-15);
        assert!((out.cloud.mu_l[3].x + 0.5).abs() < 1e-15);
        assert!((out.cloud.log_s_l[1].x - (1.0f64 / 1.6).ln()).abs() < 1e-15);
    }

    #[test]
    fn high_gradient_clones_with_jitter() {
        let cloud = GaussianCloud::one_per_triangle(2);
        let mut stats = DensifyStats::new(2);
        stats.grad_sum[0] = 1.0;
        stats.count[0] = 10;
        let out = densify_and_prune(&cloud, &stats, &[0.5; 2], 2, &DensifyConfig::default(), &mut rng()).unwrap();
        assert_eq!(out.cloned, 1);
        assert_eq!(out.cloud.tri_index, vec![0, 1, 0]);
        let d = out.cloud.mu_l[2] - cloud.mu_l[0];
        assert!(d.amax() <= 0.01 && d.norm() > 0.0);
    }
}
