use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{TetMesh, TriMesh, Vec3};
use crate::error::{Error, Result};

/// A mesh loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Mesh {
    Tri(TriMesh),
    Tet(TetMesh),
}

/// Loads `.obj` as a triangle mesh, or a `.node`/`.ele` pair as a tet mesh.
///
/// For tet meshes either file of the pair may be given; the sibling is found
/// by swapping the extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("obj") => {
            let text = fs::read_to_string(path)?;
            Ok(Mesh::Tri(read_obj(&text, &path.display().to_string())?))
        }
        Some("node") | Some("ele") => {
            let node = path.with_extension("node");
            let ele = path.with_extension("ele");
            let node_text = fs::read_to_string(&node)?;
            let ele_text = fs::read_to_string(&ele)?;
            Ok(Mesh::Tet(read_tetgen(
                &node_text,
                &node.display().to_string(),
                &ele_text,
                &ele.display().to_string(),
            )?))
        }
        _ => Err(Error::invalid(format!(
            "unsupported mesh extension for {}",
            path.display()
        ))),
    }
}

/// Writes a triangle mesh as OBJ or a tet mesh as a `.node`/`.ele` pair.
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match mesh {
        Mesh::Tri(m) => write_atomic(path, &write_obj(m)),
        Mesh::Tet(m) => {
            let (node, ele) = write_tetgen(m);
            write_atomic(&path.with_extension("node"), &node)?;
            write_atomic(&path.with_extension("ele"), &ele)
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn format_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses ASCII OBJ (`v` and `f` records; polygons are fan-triangulated).
pub fn read_obj(text: &str, source: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format_err(source, line_no, format!("bad vertex: {e}")))?;
                if coords.len() != 3 {
                    return Err(format_err(source, line_no, "vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|e| format_err(source, line_no, format!("bad face index: {e}")))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(format_err(source, line_no, "face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(format_err(source, line_no, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles).map_err(|e| format_err(source, 0, e.to_string()))
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(ln, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (ln + 1, l.split_whitespace().collect()))
    })
}

/// Parses a TetGen `.node`/`.ele` pair with 1-based indices.
pub fn read_tetgen(node: &str, node_src: &str, ele: &str, ele_src: &str) -> Result<TetMesh> {
    let mut nodes = records(node);
    let (hl, header) = nodes
        .next()
        .ok_or_else(|| format_err(node_src, 1, "missing header"))?;
    let count: usize = header
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(node_src, hl, "bad point count"))?;
    if header.get(1).map(|d| *d != "3").unwrap_or(true) {
        return Err(format_err(node_src, hl, "expected dimension 3"));
    }
    let mut vertices = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, rec) = nodes
            .next()
            .ok_or_else(|| format_err(node_src, 0, format!("expected {count} points")))?;
        if rec.len() < 4 {
            return Err(format_err(node_src, ln, "point needs index and 3 coordinates"));
        }
        let c: Vec<f64> = rec[1..4]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(node_src, ln, format!("bad coordinate: {e}")))?;
        vertices.push(Vec3::new(c[0], c[1], c[2]));
    }

    let mut eles = records(ele);
    let (hl, header) = eles
        .next()
        .ok_or_else(|| format_err(ele_src, 1, "missing header"))?;
    let count: usize = header
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(ele_src, hl, "bad tet count"))?;
    if header.get(1).map(|d| *d != "4").unwrap_or(true) {
        return Err(format_err(ele_src, hl, "expected 4 nodes per tet"));
    }
    let mut tets = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, rec) = eles
            .next()
            .ok_or_else(|| format_err(ele_src, 0, format!("expected {count} tets")))?;
        if rec.len() < 5 {
            return Err(format_err(ele_src, ln, "tet needs index and 4 vertex ids"));
        }
        let mut t = [0usize; 4];
        for k in 0..4 {
            let i: usize = rec[k + 1]
                .parse()
                .map_err(|e| format_err(ele_src, ln, format!("bad vertex id: {e}")))?;
            if i == 0 || i > vertices.len() {
                return Err(format_err(ele_src, ln, format!("vertex id {i} out of range")));
            }
            t[k] = i - 1;
        }
        tets.push(t);
    }
    TetMesh::new(vertices, tets).map_err(|e| format_err(ele_src, 0, e.to_string()))
}

pub fn write_tetgen(mesh: &TetMesh) -> (String, String) {
    let mut node = format!("{} 3 0 0\n", mesh.vertices().len());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(node, "{} {} {} {}", i + 1, v.x, v.y, v.z);
    }
    let mut ele = format!("{} 4 0\n", mesh.tets().len());
    for (i, t) in mesh.tets().iter().enumerate() {
        let _ = writeln!(ele, "{} {} {} {} {}", i + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
    }
    (node, ele)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tetrahedralize_sphere;

    #[test]
    fn single_face_obj() {
        let m = read_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", "t.obj").unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_parse_error_reports_line() {
        let err = read_obj("v 0 0 0\nv 1 x 0\n", "bad.obj").unwrap_err();
        match err {
            Error::Format { line, path, .. } => {
                assert_eq!(line, 2);
                assert_eq!(path, "bad.obj");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn tetgen_pair_counts() {
        let node = "# unit tet\n4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";
        let ele = "1 4 0\n1 1 2 3 4\n";
        let m = read_tetgen(node, "a.node", ele, "a.ele").unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.tets().len(), 1);
        let err = read_tetgen(node, "a.node", "1 4 0\n1 1 2 3 9\n", "a.ele").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn sphere_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = tetrahedralize_sphere(0.01, 2).unwrap();
        let path = dir.path().join("ball.node");
        save_mesh(&Mesh::Tet(m.clone()), &path).unwrap();
        let Mesh::Tet(back) = load_mesh(dir.path().join("ball.ele")).unwrap() else {
            panic!("expected tet mesh");
        };
        assert_eq!(back.tets(), m.tets());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-7);
        }
        let obj = dir.path().join("ball.obj");
        save_mesh(&Mesh::Tri(m.surface().clone()), &obj).unwrap();
        let Mesh::Tri(s) = load_mesh(&obj).unwrap() else {
            panic!("expected tri mesh");
        };
        assert_eq!(s.triangles(), m.surface().triangles());
    }
}
