//! Indexed triangle meshes with box annotations, and their file forms.
//!
//! Binary STL carries the surface triangles first, then 12 triangles per
//! annotation box; the 80-byte header records `faces=<n> boxes=<m>` so the
//! two parts can be separated on read. ASCII PLY stores the boxes as the
//! separate elements `box_vertex` and `box_face`. Both writers also emit a
//! `<stem>.boxes.json` sidecar listing the box corners.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Axis-aligned box in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if (0..3).any(|a| !(min[a] <= max[a])) {
            return Err(Error::Invalid(format!("box min {min:?} exceeds max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn corners(&self) -> [Point3; 8] {
        let (lo, hi) = (self.min, self.max);
        [
            [lo[0], lo[1], lo[2]],
            [hi[0], lo[1], lo[2]],
            [hi[0], hi[1], lo[2]],
            [lo[0], hi[1], lo[2]],
            [lo[0], lo[1], hi[2]],
            [hi[0], lo[1], hi[2]],
            [hi[0], hi[1], hi[2]],
            [lo[0], hi[1], hi[2]],
        ]
    }

    /// Outward-facing triangulation of the box surface, indexing [`Aabb::corners`].
    pub const FACES: [[u32; 3]; 12] = [
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];

    fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some(Self { min: lo, max: hi })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
    pub boxes: Vec<Aabb>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces, boxes: Vec::new() };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::Invalid(format!("face {i} {f:?} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Invalid(format!("face {i} {f:?} is degenerate")));
            }
        }
        if let Some(i) = self.vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Invalid(format!("vertex {i} is not finite")));
        }
        for b in &self.boxes {
            Aabb::new(b.min, b.max)?;
        }
        Ok(())
    }

    /// Number of faces incident to each undirected edge.
    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn edge_count(&self) -> usize {
        self.edge_face_counts().len()
    }

    /// True when every edge borders exactly two faces.
    pub fn is_closed(&self) -> bool {
        !self.faces.is_empty() && self.edge_face_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over the vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Signed enclosed volume (divergence theorem); positive for outward-oriented faces.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0]))
                    / 6.0
            })
            .sum()
    }

    /// Connected components over face adjacency, counted by shared vertices.
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for f in &self.faces {
            let r0 = find(&mut parent, f[0]);
            for &v in &f[1..] {
                let r = find(&mut parent, v);
                if r != r0 {
                    parent[r as usize] = r0;
                }
            }
        }
        let mut roots: Vec<u32> = self.faces.iter().map(|f| f[0]).collect();
        for r in roots.iter_mut() {
            *r = find(&mut parent, *r);
        }
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    StlBinary,
    PlyAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("stl") => Ok(MeshFormat::StlBinary),
            Some("ply") => Ok(MeshFormat::PlyAscii),
            _ => Err(Error::format(path, "mesh path must end in .stl or .ply")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxesFile {
    pub boxes: Vec<Aabb>,
}

pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    let stem = mesh_path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    mesh_path.with_file_name(format!("{stem}.boxes.json"))
}

pub fn write_boxes_json(boxes: &[Aabb], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&BoxesFile { boxes: boxes.to_vec() }).expect("boxes serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_boxes_json(path: &Path) -> Result<Vec<Aabb>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: BoxesFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(file.boxes)
}

/// Writes the mesh and its `<stem>.boxes.json` sidecar.
pub fn save_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    let bytes = match format {
        MeshFormat::StlBinary => encode_stl(mesh),
        MeshFormat::PlyAscii => encode_ply(mesh).into_bytes(),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    write_boxes_json(&mesh.boxes, &sidecar_path(path))
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let format = MeshFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mesh = match format {
        MeshFormat::StlBinary => decode_stl(&bytes).map_err(|m| Error::format(path, m))?,
        MeshFormat::PlyAscii => {
            let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "PLY is not UTF-8"))?;
            decode_ply(&text).map_err(|m| Error::format(path, m))?
        }
    };
    mesh.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(mesh)
}

fn triangle_normal(a: Point3, b: Point3, c: Point3) -> [f32; 3] {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len > 0.0 {
        n.map(|c| (c / len) as f32)
    } else {
        [0.0; 3]
    }
}

fn encode_stl(mesh: &TriMesh) -> Vec<u8> {
    let box_tris = 12 * mesh.boxes.len();
    let total = mesh.faces.len() + box_tris;
    let mut out = Vec::with_capacity(84 + 50 * total);
    let mut header = format!("osteopipe mesh faces={} boxes={}", mesh.faces.len(), mesh.boxes.len()).into_bytes();
    header.resize(80, b' ');
    out.extend_from_slice(&header);
    out.extend_from_slice(&(total as u32).to_le_bytes());

    // Normals come from the stored f32 positions, so a decoded and
    // re-encoded mesh reproduces the same bytes.
    let mut push = |a: Point3, b: Point3, c: Point3| {
        let [a, b, c] = [a, b, c].map(|p| p.map(|v| v as f32 as f64));
        for v in triangle_normal(a, b, c) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in [a, b, c] {
            for v in p {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    };
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
        push(a, b, c);
    }
    for bx in &mesh.boxes {
        let corners = bx.corners();
        for f in Aabb::FACES {
            let [a, b, c] = f.map(|i| corners[i as usize]);
            push(a, b, c);
        }
    }
    out
}

fn parse_stl_header(header: &[u8]) -> Option<(usize, usize)> {
    let text = std::str::from_utf8(header).ok()?;
    let mut faces = None;
    let mut boxes = None;
    for tok in text.split_whitespace() {
        if let Some(v) = tok.strip_prefix("faces=") {
            faces = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("boxes=") {
            boxes = v.parse().ok();
        }
    }
    Some((faces?, boxes?))
}

fn decode_stl(bytes: &[u8]) -> std::result::Result<TriMesh, String> {
    if bytes.len() < 84 {
        return Err("truncated STL header".into());
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(format!("STL declares {count} triangles but has {} bytes", bytes.len()));
    }
    let (face_count, box_count) = parse_stl_header(&bytes[..80]).unwrap_or((count, 0));
    if face_count + 12 * box_count != count {
        return Err("STL header counts disagree with triangle count".into());
    }

    let tri = |i: usize| -> [Point3; 3] {
        let base = 84 + 50 * i + 12;
        let f = |o: usize| {
            let b = &bytes[base + o..base + o + 4];
            f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
        };
        [[f(0), f(4), f(8)], [f(12), f(16), f(20)], [f(24), f(28), f(32)]]
    };

    let mut mesh = TriMesh::default();
    let mut welded: HashMap<[u64; 3], u32> = HashMap::new();
    for i in 0..face_count {
        let mut face = [0u32; 3];
        for (k, p) in tri(i).into_iter().enumerate() {
            let key = p.map(f64::to_bits);
            face[k] = *welded.entry(key).or_insert_with(|| {
                mesh.vertices.push(p);
                (mesh.vertices.len() - 1) as u32
            });
        }
        mesh.faces.push(face);
    }
    for b in 0..box_count {
        let pts: Vec<Point3> = (0..12).flat_map(|t| tri(face_count + 12 * b + t)).collect();
        mesh.boxes.push(Aabb::from_points(&pts).expect("twelve triangles"));
    }
    Ok(mesh)
}

fn encode_ply(mesh: &TriMesh) -> String {
    let mut s = String::new();
    let nb = mesh.boxes.len();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\ncomment osteopipe mesh\n\
         element vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\n\
         element box_vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element box_face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len(),
        8 * nb,
        12 * nb
    );
    for p in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    for b in &mesh.boxes {
        for p in b.corners() {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
    }
    for b in 0..nb {
        let o = 8 * b as u32;
        for f in Aabb::FACES {
            let _ = writeln!(s, "3 {} {} {}", f[0] + o, f[1] + o, f[2] + o);
        }
    }
    s
}

fn decode_ply(text: &str) -> std::result::Result<TriMesh, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut elements: Vec<(String, usize)> = Vec::new();
    for line in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(format!("unsupported PLY format {fmt}")),
            ["element", name, n] => {
                elements.push((name.to_string(), n.parse().map_err(|_| format!("bad element count {n}"))?))
            }
            ["end_header"] => break,
            _ => {}
        }
    }

    let mut mesh = TriMesh::default();
    let mut box_points: Vec<Point3> = Vec::new();
    let parse_point = |line: &str| -> std::result::Result<Point3, String> {
        let v: Vec<f64> = line.split_whitespace().take(3).map(str::parse).collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("bad vertex line {line:?}"))?;
        if v.len() < 3 {
            return Err(format!("bad vertex line {line:?}"));
        }
        Ok([v[0], v[1], v[2]])
    };
    let parse_face = |line: &str| -> std::result::Result<[u32; 3], String> {
        let v: Vec<u32> = line.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("bad face line {line:?}"))?;
        if v.len() != 4 || v[0] != 3 {
            return Err(format!("only triangles are supported: {line:?}"));
        }
        Ok([v[1], v[2], v[3]])
    };
    for (name, n) in &elements {
        for _ in 0..*n {
            let line = lines.next().ok_or("PLY body ended early")?;
            match name.as_str() {
                "vertex" => mesh.vertices.push(parse_point(line)?),
                "face" => mesh.faces.push(parse_face(line)?),
                "box_vertex" => box_points.push(parse_point(line)?),
                _ => {}
            }
        }
    }
    if box_points.len() % 8 != 0 {
        return Err("box_vertex count is not a multiple of 8".into());
    }
    mesh.boxes = box_points.chunks(8).map(|c| Aabb::from_points(c).expect("eight points")).collect();
    Ok(mesh)
}

/// Axis-aligned unit cube with outward faces; handy in tests and examples.
pub fn unit_cube() -> TriMesh {
    let b = Aabb { min: [0.0; 3], max: [1.0; 3] };
    TriMesh { vertices: b.corners().to_vec(), faces: Aabb::FACES.to_vec(), boxes: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_is_closed_with_unit_volume() {
        let c = unit_cube();
        assert!(c.is_closed());
        assert_eq!(c.euler_characteristic(), 2);
        assert!((c.signed_volume() - 1.0).abs() < 1e-12);
        assert_eq!(c.component_count(), 1);
    }

    #[test]
    fn rejects_degenerate_and_out_of_range_faces() {
        assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 0, 1]]).is_err());
        assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
        assert!(Aabb::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn stl_keeps_facet_count_and_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.stl");
        save_mesh(&unit_cube(), &path, MeshFormat::StlBinary).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[80..84].try_into().unwrap()), 12);

        let mut boxed = unit_cube();
        boxed.boxes.push(Aabb::new([0.25, 0.0, -1.0], [0.5, 2.0, 3.0]).unwrap());
        save_mesh(&boxed, &path, MeshFormat::StlBinary).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(back.vertices.len(), 8);
        assert_eq!(back.faces.len(), 12);
        assert_eq!(back.boxes, boxed.boxes);
        let side = read_boxes_json(&sidecar_path(&path)).unwrap();
        assert_eq!(side.len(), 1);
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mut m = unit_cube();
        m.vertices[3] = [0.1234567891, -2.0e-7, 1e5 / 3.0];
        m.boxes.push(Aabb::new([0.0; 3], [1.0, 2.0, 3.0]).unwrap());
        save_mesh(&m, &path, MeshFormat::PlyAscii).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(back.vertices.len(), m.vertices.len());
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.boxes, m.boxes);
    }

    #[test]
    fn sidecar_name_follows_mesh_stem() {
        assert_eq!(sidecar_path(Path::new("/a/left.stl")), PathBuf::from("/a/left.boxes.json"));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let err = save_mesh(&unit_cube(), Path::new("/nonexistent-dir/x.stl"), MeshFormat::StlBinary);
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
