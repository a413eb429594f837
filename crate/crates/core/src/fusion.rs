//! Assembly of renderable Gaussians from the bound cloud and the UV maps:
//! the base-only path and the fused path that applies the geometric deltas
//! and resamples the residual appearance at the displaced uv.
//!
//! Appearance maps hold logits; base and residual are summed before the
//! sigmoid.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::geometry::{bind_one, bind_one_backward, CloudGrads, GaussianCloud, TriangleFrame};
use crate::quat::{self, Quat};
use crate::uvfield::{uv_of_local, uv_of_local_backward, BilinearTap, UVMap, UvChart, UvPoint};

/// Channels of the base and residual appearance maps: rgb logits + opacity logit.
pub const APPEARANCE_CHANNELS: usize = 4;
/// Channels of the geometric deformation map: Δμ (3), Δlog-s (3), Δr (4).
pub const DEFORM_CHANNELS: usize = 10;
/// Smallest admissible norm of `r_l + Δr`.
pub const MIN_ROTATION_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalGaussians {
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    pub mu: Vec<Vector3<f64>>,
    pub scale: Vec<Vector3<f64>>,
    pub rot: Vec<Quat>,
}

impl GlobalGaussians {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        check_len("gaussian colors", n, self.color.len())?;
        check_len("gaussian opacities", n, self.opacity.len())?;
        check_len("gaussian scales", n, self.scale.len())?;
        check_len("gaussian rotations", n, self.rot.len())?;
        for i in 0..n {
            let finite = self.color[i].iter().all(|v| v.is_finite())
                && self.opacity[i].is_finite()
                && self.mu[i].iter().all(|v| v.is_finite())
                && self.scale[i].iter().all(|v| v.is_finite())
                && self.rot[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite("global gaussian"));
            }
        }
        Ok(())
    }
}

/// Gradients with the layout of [`GlobalGaussians`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    pub mu: Vec<Vector3<f64>>,
    pub scale: Vec<Vector3<f64>>,
    pub rot: Vec<Quat>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            color: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            mu: vec![Vector3::zeros(); n],
            scale: vec![Vector3::zeros(); n],
            rot: vec![[0.0; 4]; n],
        }
    }
}

/// Where the residual appearance is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// At the displaced uv `UV(μ_l + Δμ)`.
    #[default]
    Resample,
    /// At the undisplaced uv `UV(μ_l)`; ablation only.
    NoResample,
}

/// Per-Gaussian intermediate values of one assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRecord {
    pub p_base: UvPoint,
    pub p_residual: UvPoint,
    /// Pre-sigmoid color and opacity sums.
    pub logits: [f64; 4],
    pub base_logits: [f64; 4],
    pub residual_logits: [f64; 4],
    pub deltas: [f64; DEFORM_CHANNELS],
    pub mu_l: Vector3<f64>,
    pub log_s_l: Vector3<f64>,
    /// `r_l + Δr` before normalization.
    pub r_raw: Quat,
    pub r_l: Quat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionRecord {
    pub mode: FusionMode,
    /// False for the base-only assembly.
    pub fused: bool,
    pub gaussians: Vec<GaussianRecord>,
}

/// Maps consumed by the fused assembly.
#[derive(Debug, Clone, Copy)]
pub struct FusionInputs<'a> {
    pub base: &'a UVMap,
    pub residual: Option<&'a UVMap>,
    pub deform: Option<&'a UVMap>,
}

/// Gradients of one assembly w.r.t. maps and cloud parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub base: UVMap,
    pub residual: Option<UVMap>,
    pub deform: Option<UVMap>,
    pub cloud: CloudGrads,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_maps(inputs: &FusionInputs) -> Result<()> {
    let b = inputs.base;
    b.check_shape(b.width, b.height, APPEARANCE_CHANNELS)?;
    if let Some(r) = inputs.residual {
        r.check_shape(r.width, r.height, APPEARANCE_CHANNELS)?;
    }
    if let Some(d) = inputs.deform {
        d.check_shape(d.width, d.height, DEFORM_CHANNELS)?;
    }
    Ok(())
}

/// Base-only assembly: colors and opacities from `base` at `UV(μ_l)`,
/// geometry from the stored local parameters.
pub fn assemble_stage1(
    cloud: &GaussianCloud,
    frames: &[TriangleFrame],
    charts: &[UvChart],
    base: &UVMap,
) -> Result<(GlobalGaussians, FusionRecord)> {
    let inputs = FusionInputs {
        base,
        residual: None,
        deform: None,
    };
    assemble(cloud, frames, charts, &inputs, FusionMode::Resample, false)
}

/// Fused assembly with geometric deltas and residual appearance.
pub fn fuse(
    cloud: &GaussianCloud,
    frames: &[TriangleFrame],
    charts: &[UvChart],
    base: &UVMap,
    residual: &UVMap,
    deform: &UVMap,
    mode: FusionMode,
) -> Result<(GlobalGaussians, FusionRecord)> {
    let inputs = FusionInputs {
        base,
        residual: Some(residual),
        deform: Some(deform),
    };
    assemble(cloud, frames, charts, &inputs, mode, true)
}

/// Shared forward. A fused assembly with missing maps treats them as zero.
pub fn assemble(
    cloud: &GaussianCloud,
    frames: &[TriangleFrame],
    charts: &[UvChart],
    inputs: &FusionInputs,
    mode: FusionMode,
    fused: bool,
) -> Result<(GlobalGaussians, FusionRecord)> {
    check_maps(inputs)?;
    let per: Vec<Result<(GaussianRecord, [f64; 3], f64, Vector3<f64>, Vector3<f64>, Quat)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| assemble_one(cloud, frames, charts, inputs, mode, fused, i))
        .collect();
    let mut out = GlobalGaussians::default();
    let mut records = Vec::with_capacity(per.len());
    for r in per {
        let (rec, c, o, mu, s, r) = r?;
        out.color.push(c);
        out.opacity.push(o);
        out.mu.push(mu);
        out.scale.push(s);
        out.rot.push(r);
        records.push(rec);
    }
    Ok((
        out,
        FusionRecord {
            mode,
            fused,
            gaussians: records,
        },
    ))
}

fn assemble_one(
    cloud: &GaussianCloud,
    frames: &[TriangleFrame],
    charts: &[UvChart],
    inputs: &FusionInputs,
    mode: FusionMode,
    fused: bool,
    i: usize,
) -> Result<(GaussianRecord, [f64; 3], f64, Vector3<f64>, Vector3<f64>, Quat)> {
    let tri = cloud.tri_index[i];
    let chart = &charts[tri];
    let p_base = uv_of_local(&cloud.mu_l[i], chart);
    let mut base_logits = [0.0; 4];
    let b = inputs.base;
    BilinearTap::new(b.width, b.height, p_base.uv)?.gather(b, &mut base_logits);

    let mut deltas = [0.0; DEFORM_CHANNELS];
    if let (true, Some(d)) = (fused, inputs.deform) {
        BilinearTap::new(d.width, d.height, p_base.uv)?.gather(d, &mut deltas);
    }
    let mu_l = cloud.mu_l[i] + Vector3::new(deltas[0], deltas[1], deltas[2]);
    let log_s_l = cloud.log_s_l[i] + Vector3::new(deltas[3], deltas[4], deltas[5]);
    let rl = cloud.r_l[i];
    let r_raw = [rl[0] + deltas[6], rl[1] + deltas[7], rl[2] + deltas[8], rl[3] + deltas[9]];
    let r_l = if fused {
        let n = quat::norm(&r_raw);
        if !(n >= MIN_ROTATION_NORM) {
            return Err(Error::DegenerateRotation { index: i, norm: n });
        }
        quat::normalize(&r_raw)
    } else {
        r_raw
    };

    let p_residual = match mode {
        FusionMode::Resample => uv_of_local(&mu_l, chart),
        FusionMode::NoResample => p_base,
    };
    let mut residual_logits = [0.0; 4];
    if let (true, Some(r)) = (fused, inputs.residual) {
        BilinearTap::new(r.width, r.height, p_residual.uv)?.gather(r, &mut residual_logits);
    }
    let mut logits = [0.0; 4];
    for k in 0..4 {
        logits[k] = base_logits[k] + residual_logits[k];
    }
    let color = [sigmoid(logits[0]), sigmoid(logits[1]), sigmoid(logits[2])];
    let opacity = sigmoid(logits[3]);
    let (mu, s, r) = bind_one(&frames[tri], &mu_l, &log_s_l, &r_l);
    Ok((
        GaussianRecord {
            p_base,
            p_residual,
            logits,
            base_logits,
            residual_logits,
            deltas,
            mu_l,
            log_s_l,
            r_raw,
            r_l,
        },
        color,
        opacity,
        mu,
        s,
        r,
    ))
}

/// Adjoint of [`assemble`] (and so of [`assemble_stage1`] and [`fuse`]).
///
/// `d_local` optionally carries extra upstream gradients on the displaced
/// local parameters `(μ'_l, log s'_l, r'_l)` of every Gaussian, as produced
/// by regularizers on the fused geometry.
pub fn fuse_backward(
    record: &FusionRecord,
    cloud: &GaussianCloud,
    frames: &[TriangleFrame],
    charts: &[UvChart],
    inputs: &FusionInputs,
    d: &GaussianGrads,
    d_local: Option<&CloudGrads>,
) -> Result<FusionGrads> {
    check_maps(inputs)?;
    let n = cloud.len();
    check_len("fusion record", n, record.gaussians.len())?;
    check_len("gaussian gradients", n, d.mu.len())?;
    if let Some(extra) = d_local {
        check_len("local gradients", n, extra.mu_l.len())?;
    }
    let b = inputs.base;
    let mut d_base = UVMap::zeros(b.width, b.height, b.channels);
    let mut d_residual = if record.fused {
        inputs.residual.map(|r| UVMap::zeros(r.width, r.height, r.channels))
    } else {
        None
    };
    let mut d_deform = if record.fused {
        inputs.deform.map(|m| UVMap::zeros(m.width, m.height, m.channels))
    } else {
        None
    };
    let mut grads = CloudGrads::zeros(n);

    for i in 0..n {
        let rec = &record.gaussians[i];
        let tri = cloud.tri_index[i];
        let chart = &charts[tri];
        let (mut d_mu_l, mut d_log_s, mut d_r_l) =
            bind_one_backward(&frames[tri], &rec.log_s_l, &rec.r_l, &d.mu[i], &d.scale[i], &d.rot[i]);
        if let Some(extra) = d_local {
            d_mu_l += extra.mu_l[i];
            d_log_s += extra.log_s_l[i];
            for k in 0..4 {
                d_r_l[k] += extra.r_l[i][k];
            }
        }

        let mut d_logits = [0.0; 4];
        for k in 0..3 {
            let c = sigmoid(rec.logits[k]);
            d_logits[k] = d.color[i][k] * c * (1.0 - c);
        }
        let o = sigmoid(rec.logits[3]);
        d_logits[3] = d.opacity[i] * o * (1.0 - o);

        let tap_b = BilinearTap::new(b.width, b.height, rec.p_base.uv)?;
        let mut d_p_base = tap_b.scatter(b, &d_logits, Some(&mut d_base));

        if record.fused {
            if let (Some(r), Some(dr)) = (inputs.residual, d_residual.as_mut()) {
                let tap = BilinearTap::new(r.width, r.height, rec.p_residual.uv)?;
                let d_p = tap.scatter(r, &d_logits, Some(dr));
                match record.mode {
                    FusionMode::Resample => d_mu_l += uv_of_local_backward(&rec.p_residual, chart, d_p),
                    FusionMode::NoResample => {
                        d_p_base[0] += d_p[0];
                        d_p_base[1] += d_p[1];
                    }
                }
            }
        }
        let d_r_raw = if record.fused {
            quat::normalize_backward(&rec.r_raw, &d_r_l)
        } else {
            d_r_l
        };
        if record.fused {
            if let (Some(m), Some(dm)) = (inputs.deform, d_deform.as_mut()) {
                let d_deltas = [
                    d_mu_l.x, d_mu_l.y, d_mu_l.z, d_log_s.x, d_log_s.y, d_log_s.z, d_r_raw[0], d_r_raw[1],
                    d_r_raw[2], d_r_raw[3],
                ];
                let tap = BilinearTap::new(m.width, m.height, rec.p_base.uv)?;
                let d_p = tap.scatter(m, &d_deltas, Some(dm));
                d_p_base[0] += d_p[0];
                d_p_base[1] += d_p[1];
            }
        }
        d_mu_l += uv_of_local_backward(&rec.p_base, chart, d_p_base);
        grads.mu_l[i] = d_mu_l;
        grads.log_s_l[i] = d_log_s;
        grads.r_l[i] = d_r_raw;
    }
    Ok(FusionGrads {
        base: d_base,
        residual: d_residual,
        deform: d_deform,
        cloud: grads,
    })
}
