//! Minimal Wavefront OBJ support: `v` and triangular `f` records only.

use std::fmt::Write as _;
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

pub fn obj_read(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    obj_from_str(&text, &path.display().to_string())
}

pub fn obj_write(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, obj_to_string(mesh)).map_err(|e| Error::io(path, e))
}

/// Parses OBJ text. `source` names the input in error messages.
pub fn obj_from_str(text: &str, source: &str) -> Result<TriMesh> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(lineno, format!("bad vertex coordinate: {e}")))?;
                // An optional fourth (w) or color components are tolerated and ignored.
                if coords.len() < 3 {
                    return Err(err(lineno, format!("vertex needs 3 coordinates, got {}", coords.len())));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        match head.parse::<i64>() {
                            Ok(v) if v >= 1 => Ok(v as usize - 1),
                            Ok(v) if v < 0 && (-v) as usize <= vertices.len() => {
                                Ok(vertices.len() - (-v) as usize)
                            }
                            _ => Err(err(lineno, format!("bad face index `{t}`"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(lineno, format!("face must be a triangle, got {} indices", idx.len())));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            // Normals, texture coordinates, groups and materials are ignored.
            Some("vn") | Some("vt") | Some("vp") | Some("o") | Some("g") | Some("s")
            | Some("mtllib") | Some("usemtl") | Some("l") | None => {}
            Some(other) => return Err(err(lineno, format!("unrecognized record `{other}`"))),
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| err(0, e.to_string()))
}

pub fn obj_to_string(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for v in &mesh.vertices {
        // `{:?}` on f64 prints the shortest string that round-trips exactly.
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::test_meshes::icosphere;

    #[test]
    fn reads_minimal_file() {
        let m = obj_from_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", "t").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn ignores_slash_suffixes() {
        let m = obj_from_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 3/2\n", "t").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn malformed_face_names_line() {
        let e = obj_from_str("v 0 0 0\nv 1 0 0\nf 1 2\n", "bad.obj").unwrap_err();
        match e {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, "bad.obj");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(obj_from_str("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", "q").is_err());
        assert!(obj_from_str("v 0 zero 0\n", "q").is_err());
    }

    #[test]
    fn round_trip_through_file() {
        let m = icosphere(2, 0.37, Vec3::new(0.1, 0.2, -0.3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.obj");
        obj_write(&m, &path).unwrap();
        let back = obj_read(&path).unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() <= 1e-6);
        }
    }
}
