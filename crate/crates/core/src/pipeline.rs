//! The avatar model (bound cloud plus the three UV fields) and the
//! per-frame forward paths used for rendering and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ConditionVector, ConditionedMLP, Field, FieldInput, FieldModel, LearnableUVMap, MlpConfig, MlpLayout};
use crate::fusion::{assemble_stage1, fuse, FusionMode, APPEARANCE_CHANNELS, DEFORM_CHANNELS};
use crate::geometry::{deform, triangle_frames, triangle_frames_lenient, BlendshapeRig, GaussianCloud, TriangleFrame};
use crate::raster::{render, Image};
use crate::scene::Frame;
use crate::uvfield::{bake_normal_map, build_charts, build_texel_table, uv_of_local, BilinearTap, TexelTable, UVMap, UvChart};

/// Base appearance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseFieldKind {
    /// A directly optimized uv map.
    Map,
    /// A per-texel MLP on the normal map.
    Mlp { hidden: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub uv_res: usize,
    pub base: BaseFieldKind,
    pub dynamic_hidden: Vec<usize>,
    pub geo_hidden: Vec<usize>,
    /// Side of the coarse grid emitted by the deformation MLP.
    pub geo_grid: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            uv_res: crate::uvfield::DEFAULT_UV_RES,
            base: BaseFieldKind::Map,
            dynamic_hidden: vec![64, 64],
            geo_hidden: vec![64, 64],
            geo_grid: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.uv_res < 8 {
            return Err(Error::Config(format!("uv_res must be at least 8, got {}", self.uv_res)));
        }
        if self.geo_grid == 0 {
            return Err(Error::Config("geo_grid must be positive".into()));
        }
        let widths = self.dynamic_hidden.iter().chain(&self.geo_hidden);
        let base = match &self.base {
            BaseFieldKind::Mlp { hidden } => hidden.as_slice(),
            BaseFieldKind::Map => &[],
        };
        if widths.chain(base).any(|w| *w == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable state of an avatar.
#[derive(Debug, Clone, PartialEq)]
pub struct Avatar {
    pub cloud: GaussianCloud,
    pub base: Field,
    pub dynamic: Field,
    pub geo: Field,
}

impl Avatar {
    /// Fresh avatar: one Gaussian per triangle, zero base map (or a base MLP
    /// with zero output layer), zero-output dynamic and deformation MLPs.
    pub fn new(model: &ModelConfig, num_triangles: usize, cond_dim: usize) -> Result<Self> {
        model.validate()?;
        let res = model.uv_res;
        let mlp = |hidden: &[usize], layout, uses_u, cond_dim, out_channels, seed| {
            ConditionedMLP::new(MlpConfig {
                hidden: hidden.to_vec(),
                layout,
                uses_u,
                cond_dim,
                out_channels,
                width: res,
                height: res,
                seed,
            })
        };
        let base = match &model.base {
            BaseFieldKind::Map => Field::Map(LearnableUVMap::zeros(res, res, APPEARANCE_CHANNELS)),
            BaseFieldKind::Mlp { hidden } => Field::Mlp(mlp(
                hidden,
                MlpLayout::PerTexel,
                true,
                0,
                APPEARANCE_CHANNELS,
                model.seed,
            )?),
        };
        let dynamic = Field::Mlp(mlp(
            &model.dynamic_hidden,
            MlpLayout::PerTexel,
            true,
            cond_dim,
            APPEARANCE_CHANNELS,
            model.seed.wrapping_add(1),
        )?);
        let geo = Field::Mlp(mlp(
            &model.geo_hidden,
            MlpLayout::Grid { grid: model.geo_grid },
            false,
            cond_dim,
            DEFORM_CHANNELS,
            model.seed.wrapping_add(2),
        )?);
        Ok(Avatar {
            cloud: GaussianCloud::one_per_triangle(num_triangles),
            base,
            dynamic,
            geo,
        })
    }
}

/// Scene-level data shared by every frame: rest frames, uv charts and the
/// texel table used to bake normals.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub rig: BlendshapeRig,
    pub rest_frames: Vec<TriangleFrame>,
    pub charts: Vec<UvChart>,
    pub table: TexelTable,
}

/// Per-frame inputs of the fields and the assembly.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frames: Vec<TriangleFrame>,
    pub u: UVMap,
    pub cond: ConditionVector,
}

/// Which assembly produces the rendered Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderPath {
    /// Base appearance on the stage-1 geometry.
    Base,
    /// Base plus residual with geometric deltas.
    Fused(FusionMode),
    /// Residual field alone on the stage-1 geometry (single-stage ablation).
    ResidualOnly,
}

impl Pipeline {
    pub fn new(rig: &BlendshapeRig, uv_res: usize) -> Result<Self> {
        let rest_frames = triangle_frames(&rig.rest)?;
        let charts = build_charts(&rig.rest, &rest_frames)?;
        let table = build_texel_table(&rig.rest, uv_res, uv_res)?;
        Ok(Pipeline {
            rig: rig.clone(),
            rest_frames,
            charts,
            table,
        })
    }

    pub fn num_triangles(&self) -> usize {
        self.rig.rest.triangles.len()
    }

    pub fn cond_dim(&self) -> usize {
        self.rig.num_shapes() + self.rig.num_pose()
    }

    pub fn prepare(&self, frame: &Frame) -> Result<Prepared> {
        let mesh = deform(&self.rig, &frame.psi, &frame.theta)?;
        let frames = triangle_frames_lenient(&mesh, Some(&self.rest_frames));
        let u = bake_normal_map(&mesh, &frame.camera, &self.table);
        let cond = ConditionVector::new(frame.psi.clone(), frame.theta.clone())?;
        Ok(Prepared { frames, u, cond })
    }

    /// uv of every Gaussian before and after the geometric deltas of `deform`.
    pub fn sample_points(
        &self,
        cloud: &GaussianCloud,
        deform: Option<&UVMap>,
        mode: FusionMode,
    ) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
        let mut base = Vec::with_capacity(cloud.len());
        let mut residual = Vec::with_capacity(cloud.len());
        let mut deltas = [0.0; DEFORM_CHANNELS];
        for i in 0..cloud.len() {
            let chart = &self.charts[cloud.tri_index[i]];
            let p = uv_of_local(&cloud.mu_l[i], chart).uv;
            base.push(p);
            match (deform, mode) {
                (Some(d), FusionMode::Resample) => {
                    BilinearTap::new(d.width, d.height, p)?.gather(d, &mut deltas);
                    let mu = cloud.mu_l[i] + nalgebra::Vector3::new(deltas[0], deltas[1], deltas[2]);
                    residual.push(uv_of_local(&mu, chart).uv);
                }
                _ => residual.push(p),
            }
        }
        Ok((base, residual))
    }
}

/// Texels touched by bilinear lookups at `points`.
pub fn tap_mask(points: &[[f64; 2]], width: usize, height: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; width * height];
    for p in points {
        for t in BilinearTap::new(width, height, *p)?.texels {
            mask[t] = true;
        }
    }
    Ok(mask)
}

/// Renders one frame through `path` without recording anything.
pub fn render_frame(
    avatar: &Avatar,
    pipeline: &Pipeline,
    frame: &Frame,
    path: RenderPath,
    background: [f64; 3],
) -> Result<Image> {
    let prep = pipeline.prepare(frame)?;
    let cond = prep.cond.to_vec();
    let (w, h, _) = avatar.base.output_shape();
    let gaussians = match path {
        RenderPath::Base | RenderPath::ResidualOnly => {
            let (pts, _) = pipeline.sample_points(&avatar.cloud, None, FusionMode::Resample)?;
            let mask = tap_mask(&pts, w, h)?;
            let map = if path == RenderPath::Base {
                avatar.base.evaluate(&FieldInput {
                    u: Some(&prep.u),
                    cond: &[],
                    mask: Some(&mask),
                })?
            } else {
                avatar.dynamic.evaluate(&FieldInput {
                    u: Some(&prep.u),
                    cond: &cond,
                    mask: Some(&mask),
                })?
            };
            assemble_stage1(&avatar.cloud, &prep.frames, &pipeline.charts, &map)?.0
        }
        RenderPath::Fused(mode) => {
            let dg = avatar.geo.evaluate(&FieldInput::new(None, &cond))?;
            let (base_pts, res_pts) = pipeline.sample_points(&avatar.cloud, Some(&dg), mode)?;
            let b = avatar.base.evaluate(&FieldInput {
                u: Some(&prep.u),
                cond: &[],
                mask: Some(&tap_mask(&base_pts, w, h)?),
            })?;
            let r = avatar.dynamic.evaluate(&FieldInput {
                u: Some(&prep.u),
                cond: &cond,
                mask: Some(&tap_mask(&res_pts, w, h)?),
            })?;
            fuse(&avatar.cloud, &prep.frames, &pipeline.charts, &b, &r, &dg, mode)?.0
        }
    };
    Ok(render(&gaussians, &frame.camera, background)?.0)
}
