//! Minimal Wavefront OBJ reader/writer: `v`, `vt` and `f v/vt` records with
//! one `vt` per face corner.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::io::write_atomic;

pub fn to_obj_string(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for corners in &mesh.uv_coords {
        for uv in corners {
            let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
        }
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let _ = writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            tri[0] + 1,
            3 * t + 1,
            tri[1] + 1,
            3 * t + 2,
            tri[2] + 1,
            3 * t + 3
        );
    }
    out
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    write_atomic(path, to_obj_string(mesh).as_bytes())
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let bad = |line: usize, what: &str| Error::format(path, format!("line {}: {what}", line + 1));
    let mut vertices = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut faces: Vec<[(usize, usize); 3]> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(ln, "bad vertex"))?;
                if xyz.len() < 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("vt") => {
                let uv: Vec<f64> = parts
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(ln, "bad texture coordinate"))?;
                if uv.len() < 2 {
                    return Err(bad(ln, "vt needs 2 coordinates"));
                }
                uvs.push([uv[0], uv[1]]);
            }
            Some("f") => {
                let corners: Vec<(usize, usize)> = parts
                    .map(|tok| {
                        let mut it = tok.split('/');
                        let v = it.next().and_then(|s| s.parse::<usize>().ok());
                        let t = it.next().and_then(|s| s.parse::<usize>().ok());
                        match (v, t) {
                            (Some(v), Some(t)) if v > 0 && t > 0 => Ok((v - 1, t - 1)),
                            _ => Err(bad(ln, "face corners must be v/vt")),
                        }
                    })
                    .collect::<Result<_>>()?;
                if corners.len() != 3 {
                    return Err(bad(ln, "only triangles are supported"));
                }
                faces.push([corners[0], corners[1], corners[2]]);
            }
            _ => {}
        }
    }
    let mut triangles = Vec::with_capacity(faces.len());
    let mut uv_coords = Vec::with_capacity(faces.len());
    for face in &faces {
        let mut uv = [[0.0; 2]; 3];
        for (c, &(_, t)) in face.iter().enumerate() {
            uv[c] = *uvs
                .get(t)
                .ok_or_else(|| Error::format(path, format!("vt index {} out of range", t + 1)))?;
        }
        triangles.push([face[0].0, face[1].0, face[2].0]);
        uv_coords.push(uv);
    }
    TriMesh::new(vertices, triangles, uv_coords)
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mesh = TriMesh::new(
            vec![
                Vector3::new(0.1, 0.2, 0.3),
                Vector3::new(1.0 / 3.0, 0.0, -2.5),
                Vector3::new(0.0, 1.0, 1e-7),
            ],
            vec![[0, 1, 2]],
            vec![[[0.1, 0.7], [1.0 / 7.0, 0.0], [1.0, 1.0]]],
        )
        .unwrap();
        let text = to_obj_string(&mesh);
        let back = parse_obj(&text, Path::new("mem.obj")).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn rejects_quads() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n";
        assert!(parse_obj(text, Path::new("q.obj")).is_err());
    }
}
