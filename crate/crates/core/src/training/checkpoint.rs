//! Checkpoints: the configuration, cloud, field parameters, Adam moments and
//! counters in one tensor file.

use std::path::Path;

use nalgebra::Vector3;

use super::{CloudMoments, DensifyStats, Moments, OptimizerState, TrainState};
use crate::config::ProjectConfig;
use crate::error::{check_len, Error, Result};
use crate::fields::{Field, FieldModel};
use crate::geometry::GaussianCloud;
use crate::io::{Tensor, TensorFile};
use crate::pipeline::Avatar;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ProjectConfig,
    pub num_triangles: usize,
    pub cond_dim: usize,
    pub state: TrainState,
}

fn bytes_tensor(b: &[u8]) -> Tensor {
    Tensor::vector(b.iter().map(|v| f64::from(*v)).collect())
}

fn tensor_bytes(t: &Tensor, what: &str) -> Result<Vec<u8>> {
    t.data
        .iter()
        .map(|v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(v) {
                Ok(*v as u8)
            } else {
                Err(Error::format("checkpoint", format!("{what} holds a non-byte value {v}")))
            }
        })
        .collect()
}

fn push_moments(out: &mut TensorFile, name: &str, m: &Moments) {
    out.push(format!("{name}.m"), Tensor::vector(m.m.clone()));
    out.push(format!("{name}.v"), Tensor::vector(m.v.clone()));
}

fn read_moments(file: &TensorFile, name: &str, len: usize) -> Result<Moments> {
    let m = file.require(&format!("{name}.m"))?.data.clone();
    let v = file.require(&format!("{name}.v"))?.data.clone();
    check_len("adam moments", len, m.len())?;
    check_len("adam moments", len, v.len())?;
    Ok(Moments { m, v })
}

fn field_slots(field: &mut Field) -> Vec<(String, usize)> {
    field.params().iter().map(|p| (p.name.clone(), p.value.len())).collect()
}

fn vec3s(t: &Tensor, n: usize, what: &'static str) -> Result<Vec<Vector3<f64>>> {
    check_len(what, 3 * n, t.data.len())?;
    Ok(t.data.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
}

impl Checkpoint {
    pub fn to_tensor_file(&self) -> TensorFile {
        let mut out = TensorFile::new();
        out.push("meta.config", bytes_tensor(self.config.to_toml().as_bytes()));
        out.push("meta.config_hash", bytes_tensor(&self.config.hash()));
        out.push(
            "meta.dims",
            Tensor::vector(vec![self.num_triangles as f64, self.cond_dim as f64]),
        );
        let s = &self.state;
        out.push(
            "counters",
            Tensor::vector(vec![s.iter1 as f64, s.iter2 as f64, s.opt.step1 as f64, s.opt.step2 as f64]),
        );
        let c = &s.avatar.cloud;
        let n = c.len();
        out.push(
            "cloud.mu_l",
            Tensor::new(vec![n, 3], c.mu_l.iter().flat_map(|v| [v.x, v.y, v.z]).collect()),
        );
        out.push(
            "cloud.log_s_l",
            Tensor::new(vec![n, 3], c.log_s_l.iter().flat_map(|v| [v.x, v.y, v.z]).collect()),
        );
        out.push("cloud.r_l", Tensor::new(vec![n, 4], c.r_l.iter().flatten().copied().collect()));
        out.push(
            "cloud.tri_index",
            Tensor::vector(c.tri_index.iter().map(|t| *t as f64).collect()),
        );
        s.avatar.base.to_tensors("base", &mut out);
        s.avatar.dynamic.to_tensors("dynamic", &mut out);
        s.avatar.geo.to_tensors("geo", &mut out);
        push_moments(&mut out, "adam.cloud.mu_l", &s.opt.cloud.mu_l);
        push_moments(&mut out, "adam.cloud.log_s_l", &s.opt.cloud.log_s_l);
        push_moments(&mut out, "adam.cloud.r_l", &s.opt.cloud.r_l);
        let mut avatar = s.avatar.clone();
        for (prefix, field, moments) in [
            ("base", &mut avatar.base, &s.opt.base),
            ("dynamic", &mut avatar.dynamic, &s.opt.dynamic),
            ("geo", &mut avatar.geo, &s.opt.geo),
        ] {
            for ((name, _), m) in field_slots(field).iter().zip(moments) {
                push_moments(&mut out, &format!("adam.{prefix}.{name}"), m);
            }
        }
        out.push("densify.grad_sum", Tensor::vector(s.stats.grad_sum.clone()));
        out.push(
            "densify.count",
            Tensor::vector(s.stats.count.iter().map(|c| *c as f64).collect()),
        );
        out
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let text = String::from_utf8(tensor_bytes(file.require("meta.config")?, "meta.config")?)
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let config = ProjectConfig::parse(&text)?;
        let stored = tensor_bytes(file.require("meta.config_hash")?, "meta.config_hash")?;
        if stored != config.hash() {
            return Err(Error::format("checkpoint", "configuration hash mismatch"));
        }
        let dims = &file.require("meta.dims")?.data;
        check_len("checkpoint dims", 2, dims.len())?;
        let (num_triangles, cond_dim) = (dims[0] as usize, dims[1] as usize);
        let counters = &file.require("counters")?.data;
        check_len("checkpoint counters", 4, counters.len())?;

        let mut avatar = Avatar::new(&config.model, num_triangles, cond_dim)?;
        let tri = &file.require("cloud.tri_index")?.data;
        let n = tri.len();
        let r = &file.require("cloud.r_l")?.data;
        check_len("cloud r_l", 4 * n, r.len())?;
        avatar.cloud = GaussianCloud {
            mu_l: vec3s(file.require("cloud.mu_l")?, n, "cloud mu_l")?,
            log_s_l: vec3s(file.require("cloud.log_s_l")?, n, "cloud log_s_l")?,
            r_l: r.chunks_exact(4).map(|q| [q[0], q[1], q[2], q[3]]).collect(),
            tri_index: tri.iter().map(|t| *t as usize).collect(),
        };
        avatar.cloud.validate(num_triangles)?;
        avatar.base.load_tensors("base", file)?;
        avatar.dynamic.load_tensors("dynamic", file)?;
        avatar.geo.load_tensors("geo", file)?;

        let cloud = CloudMoments {
            mu_l: read_moments(file, "adam.cloud.mu_l", 3 * n)?,
            log_s_l: read_moments(file, "adam.cloud.log_s_l", 3 * n)?,
            r_l: read_moments(file, "adam.cloud.r_l", 4 * n)?,
        };
        let mut groups = Vec::new();
        for (prefix, field) in [
            ("base", &mut avatar.base),
            ("dynamic", &mut avatar.dynamic),
            ("geo", &mut avatar.geo),
        ] {
            groups.push(
                field_slots(field)
                    .iter()
                    .map(|(name, len)| read_moments(file, &format!("adam.{prefix}.{name}"), *len))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let geo = groups.pop().expect("three groups");
        let dynamic = groups.pop().expect("three groups");
        let base = groups.pop().expect("three groups");
        let grad_sum = file.require("densify.grad_sum")?.data.clone();
        let count: Vec<u64> = file.require("densify.count")?.data.iter().map(|c| *c as u64).collect();
        check_len("densify statistics", n, grad_sum.len())?;
        check_len("densify statistics", n, count.len())?;
        Ok(Checkpoint {
            config,
            num_triangles,
            cond_dim,
            state: TrainState {
                avatar,
                opt: OptimizerState {
                    cloud,
                    base,
                    dynamic,
                    geo,
                    step1: counters[2] as u64,
                    step2: counters[3] as u64,
                },
                iter1: counters[0] as u64,
                iter2: counters[1] as u64,
                stats: DensifyStats { grad_sum, count },
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{gen_scene, Preset};
    use crate::training::Trainer;

    #[test]
    fn round_trip_is_bit_exact() {
        let scene = gen_scene(Preset::Linear, 2, 10, 32).unwrap();
        let mut cfg = ProjectConfig::new("s", "o");
        cfg.image_size = [32, 32];
        cfg.model.uv_res = 32;
        cfg.model.dynamic_hidden = vec![6];
        cfg.model.geo_hidden = vec![5];
        cfg.model.geo_grid = 3;
        cfg.train.stage1_iters = 4;
        cfg.train.stage2_iters = 3;
        cfg.train.densify_interval = 2;
        let mut t = Trainer::new(&scene, cfg).unwrap();
        t.run_stage1().unwrap();
        t.run_stage2().unwrap();
        let ck = t.checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        // Gradient buffers and forward records are transient and not stored.
        assert_eq!(back.to_tensor_file(), ck.to_tensor_file());
        assert_eq!(back.state.avatar.cloud, ck.state.avatar.cloud);
        assert_eq!(back.state.opt, ck.state.opt);
        assert_eq!((back.state.iter1, back.state.iter2), (4, 3));
        let path2 = dir.path().join("b.ckpt");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
