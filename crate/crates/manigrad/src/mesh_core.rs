//! Triangle meshes: PLY I/O, validation, cached geometry, and the
//! cotangent Laplacian with barycentric lumped mass.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::io::{Cursor, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("ply parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("ply format error: {msg}")]
    Format { msg: String },
    #[error("non-manifold edges (more than two incident faces): {edges:?}")]
    NonManifold { edges: Vec<(usize, usize)> },
    #[error("inconsistently oriented edges (same direction in two faces): {edges:?}")]
    Orientation { edges: Vec<(usize, usize)> },
    #[error("degenerate face {face} (area below threshold)")]
    DegenerateFace { face: usize },
    #[error("mesh validation failed: {msg}")]
    Validation { msg: String },
}

pub type MeshResult<T> = Result<T, MeshError>;

/// Embedded triangle 2-manifold (boundary allowed) with cached geometry.
/// Construction validates index bounds, edge manifoldness, and
/// orientation consistency; violations are errors, never repaired.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    face_areas: Vec<f64>,
    face_normals: Vec<Vector3<f64>>,
    vertex_normals: Vec<Vector3<f64>>,
    vertex_faces: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    boundary_edges: Vec<(usize, usize)>,
}

impl TriangleMesh {
    pub fn from_parts(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> MeshResult<Self> {
        let nv = vertices.len();
        if nv < 3 || faces.is_empty() {
            return Err(MeshError::Validation {
                msg: format!("need at least 3 vertices and 1 face, got {} / {}", nv, faces.len()),
            });
        }
        for (i, f) in faces.iter().enumerate() {
            if f[0] >= nv || f[1] >= nv || f[2] >= nv {
                return Err(MeshError::Validation {
                    msg: format!("face {} references vertex out of range: {:?}", i, f),
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::Validation {
                    msg: format!("face {} has repeated vertices: {:?}", i, f),
                });
            }
        }

        let mut face_areas = Vec::with_capacity(faces.len());
        let mut face_normals = Vec::with_capacity(faces.len());
        for (i, f) in faces.iter().enumerate() {
            let e1 = vertices[f[1]] - vertices[f[0]];
            let e2 = vertices[f[2]] - vertices[f[0]];
            let cross = e1.cross(&e2);
            let norm = cross.norm();
            let area = 0.5 * norm;
            if !area.is_finite() || area <= 0.0 {
                return Err(MeshError::DegenerateFace { face: i });
            }
            face_areas.push(area);
            face_normals.push(cross / norm);
        }

        // Directed-edge bookkeeping: a directed edge may appear once;
        // its reverse pairs it. Two same-direction uses break
        // orientation; more than two faces on an undirected edge break
        // manifoldness.
        let mut undirected: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut bad_orientation = Vec::new();
        for f in &faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *directed.entry((a, b)).or_insert(0) += 1;
                if directed[&(a, b)] > 1 && !bad_orientation.contains(&(a, b)) {
                    bad_orientation.push((a, b));
                }
                let key = (a.min(b), a.max(b));
                *undirected.entry(key).or_insert(0) += 1;
            }
        }
        let non_manifold: Vec<(usize, usize)> =
            undirected.iter().filter(|(_, &c)| c > 2).map(|(&e, _)| e).collect();
        if !non_manifold.is_empty() {
            return Err(MeshError::NonManifold { edges: non_manifold });
        }
        if !bad_orientation.is_empty() {
            return Err(MeshError::Orientation { edges: bad_orientation });
        }
        let boundary_edges: Vec<(usize, usize)> =
            undirected.iter().filter(|(_, &c)| c == 1).map(|(&e, _)| e).collect();

        let mut vertex_faces = vec![Vec::new(); nv];
        let mut vertex_neighbors = vec![Vec::new(); nv];
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v].push(i);
            }
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                vertex_neighbors[a].push(b);
                vertex_neighbors[b].push(a);
            }
        }
        for nbrs in vertex_neighbors.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        if let Some(k) = vertex_faces.iter().position(|fs| fs.is_empty()) {
            return Err(MeshError::Validation { msg: format!("isolated vertex {}", k) });
        }

        let mut vertex_normals = Vec::with_capacity(nv);
        for k in 0..nv {
            let mut sum = Vector3::zeros();
            for &fi in &vertex_faces[k] {
                sum += face_areas[fi] * face_normals[fi];
            }
            let norm = sum.norm();
            if norm < 1e-12 {
                return Err(MeshError::Validation {
                    msg: format!("vertex {} has a degenerate area-weighted normal", k),
                });
            }
            vertex_normals.push(sum / norm);
        }

        Ok(TriangleMesh {
            vertices,
            faces,
            face_areas,
            face_normals,
            vertex_normals,
            vertex_faces,
            vertex_neighbors,
            boundary_edges,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }
    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }
    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.face_normals
    }
    pub fn vertex_normals(&self) -> &[Vector3<f64>] {
        &self.vertex_normals
    }
    pub fn vertex_faces(&self, k: usize) -> &[usize] {
        &self.vertex_faces[k]
    }
    pub fn vertex_neighbors(&self, k: usize) -> &[usize] {
        &self.vertex_neighbors[k]
    }
    pub fn boundary_edges(&self) -> &[(usize, usize)] {
        &self.boundary_edges
    }
    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    /// Bounding-box diagonal; the length scale used for default priors.
    pub fn diameter(&self) -> f64 {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (hi - lo).norm()
    }
}

/// Row-sorted sparse symmetric matrix; rows hold (col, value) pairs.
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    pub fn from_row_maps(maps: Vec<BTreeMap<usize, f64>>) -> Self {
        let n = maps.len();
        let rows = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        SparseSym { n, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by(|&(c, _)| c.cmp(&j))
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, v) in row {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(_, v)| v).sum()).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Stiffness L (positive semidefinite, the discrete -Laplacian) and
/// barycentric lumped mass M (diagonal, entries sum to surface area).
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub stiffness: SparseSym,
    pub mass: Vec<f64>,
    pub warnings: Vec<String>,
}

const COT_CLAMP: f64 = 1e6;

/// Cotangent stiffness with edge weight -(cot a + cot b)/2 and
/// diagonal the negated row sum; boundary edges see one cotangent,
/// which realizes natural Neumann conditions.
pub fn assemble_laplacian(mesh: &TriangleMesh) -> MeshResult<LaplacianPair> {
    let nv = mesh.vertex_count();
    let mean_area = mesh.total_area() / mesh.face_count() as f64;
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nv];
    let mut mass = vec![0.0; nv];
    let mut warnings = Vec::new();

    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_areas()[fi];
        if area < 1e-12 * mean_area {
            return Err(MeshError::DegenerateFace { face: fi });
        }
        for &v in f {
            mass[v] += area / 3.0;
        }
        // Corner c faces the edge (a, b); its cotangent weights that edge.
        for corner in 0..3 {
            let c = f[corner];
            let a = f[(corner + 1) % 3];
            let b = f[(corner + 2) % 3];
            let u = mesh.vertices()[a] - mesh.vertices()[c];
            let w = mesh.vertices()[b] - mesh.vertices()[c];
            let cross = u.cross(&w).norm();
            let mut cot = u.dot(&w) / cross;
            if !cot.is_finite() || cot.abs() > COT_CLAMP {
                warnings.push(format!(
                    "face {} corner {} cotangent {:e} clamped",
                    fi, corner, cot
                ));
                cot = cot.clamp(-COT_CLAMP, COT_CLAMP);
            }
            let half = 0.5 * cot;
            *rows[a].entry(b).or_insert(0.0) -= half;
            *rows[b].entry(a).or_insert(0.0) -= half;
            *rows[a].entry(a).or_insert(0.0) += half;
            *rows[b].entry(b).or_insert(0.0) += half;
        }
    }

    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    Ok(LaplacianPair { stiffness: SparseSym::from_row_maps(rows), mass, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(tok: &str) -> Option<PlyScalar> {
        Some(match tok {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn read_f64(self, cur: &mut Cursor<&[u8]>) -> std::io::Result<f64> {
        Ok(match self {
            PlyScalar::I8 => cur.read_i8()? as f64,
            PlyScalar::U8 => cur.read_u8()? as f64,
            PlyScalar::I16 => cur.read_i16::<LittleEndian>()? as f64,
            PlyScalar::U16 => cur.read_u16::<LittleEndian>()? as f64,
            PlyScalar::I32 => cur.read_i32::<LittleEndian>()? as f64,
            PlyScalar::U32 => cur.read_u32::<LittleEndian>()? as f64,
            PlyScalar::F32 => cur.read_f32::<LittleEndian>()? as f64,
            PlyScalar::F64 => cur.read_f64::<LittleEndian>()?,
        })
    }
}

struct PlyElement {
    name: String,
    count: usize,
    // (name, scalar type) for scalar properties; list properties are
    // (count type, item type) and only allowed on the face element.
    scalars: Vec<(String, PlyScalar)>,
    list: Option<(PlyScalar, PlyScalar)>,
}

fn parse_err<T>(offset: usize, msg: impl Into<String>) -> MeshResult<T> {
    Err(MeshError::Parse { offset, msg: msg.into() })
}

/// Reads ASCII or binary little-endian PLY. Vertex x/y/z and one face
/// list property are required; extra scalar vertex properties are
/// skipped. Non-triangular faces are format errors.
pub fn load_ply(path: impl AsRef<Path>) -> MeshResult<TriangleMesh> {
    let bytes = std::fs::read(path)?;
    load_ply_bytes(&bytes)
}

pub fn load_ply_bytes(bytes: &[u8]) -> MeshResult<TriangleMesh> {
    let mut offset = 0usize;
    let mut next_line = || -> MeshResult<(usize, String)> {
        let start = offset;
        if start >= bytes.len() {
            return parse_err(start, "unexpected end of header");
        }
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| MeshError::Parse { offset: start, msg: "non-utf8 header line".into() })?
            .trim_end_matches('\r')
            .to_string();
        offset = end + 1;
        Ok((start, line))
    };

    let (off, magic) = next_line()?;
    if magic.trim() != "ply" {
        return parse_err(off, "missing ply magic");
    }
    let (off, format_line) = next_line()?;
    let ascii = match format_line.trim() {
        "format ascii 1.0" => true,
        "format binary_little_endian 1.0" => false,
        other => return parse_err(off, format!("unsupported format line: {:?}", other)),
    };

    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (off, line) = next_line()?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        if line.is_empty() || line.starts_with("comment") || line.starts_with("obj_info") {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "element" => {
                if toks.len() != 3 {
                    return parse_err(off, "element line needs a name and a count");
                }
                let count: usize = toks[2]
                    .parse()
                    .map_err(|_| MeshError::Parse { offset: off, msg: "bad element count".into() })?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    scalars: Vec::new(),
                    list: None,
                });
            }
            "property" => {
                let elem = elements
                    .last_mut()
                    .ok_or(MeshError::Parse { offset: off, msg: "property before element".into() })?;
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return parse_err(off, "list property needs count type, item type, name");
                    }
                    let ct = PlyScalar::parse(toks[2])
                        .ok_or(MeshError::Parse { offset: off, msg: "bad list count type".into() })?;
                    let it = PlyScalar::parse(toks[3])
                        .ok_or(MeshError::Parse { offset: off, msg: "bad list item type".into() })?;
                    elem.list = Some((ct, it));
                } else {
                    if toks.len() != 3 {
                        return parse_err(off, "scalar property needs a type and a name");
                    }
                    let ty = PlyScalar::parse(toks[1])
                        .ok_or(MeshError::Parse { offset: off, msg: "bad property type".into() })?;
                    elem.scalars.push((toks[2].to_string(), ty));
                }
            }
            other => return parse_err(off, format!("unknown header keyword {:?}", other)),
        }
    }

    let vertex_elem_idx = elements.iter().position(|e| e.name == "vertex");
    let face_elem_idx = elements.iter().position(|e| e.name == "face");
    let (vi, fi) = match (vertex_elem_idx, face_elem_idx) {
        (Some(v), Some(f)) => (v, f),
        _ => return parse_err(offset, "header must declare vertex and face elements"),
    };
    let xyz: Vec<Option<usize>> = ["x", "y", "z"]
        .iter()
        .map(|n| elements[vi].scalars.iter().position(|(p, _)| p == n))
        .collect();
    if xyz.iter().any(|p| p.is_none()) {
        return parse_err(offset, "vertex element must declare x, y and z");
    }
    let xyz: Vec<usize> = xyz.into_iter().map(|p| p.unwrap()).collect();
    if elements[fi].list.is_none() {
        return parse_err(offset, "face element must declare a vertex index list");
    }

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    if ascii {
        let body = std::str::from_utf8(&bytes[offset..])
            .map_err(|_| MeshError::Parse { offset, msg: "non-utf8 body".into() })?;
        let mut lines = body.lines().filter(|l| !l.trim().is_empty());
        for elem in &elements {
            for rec in 0..elem.count {
                let line = lines.next().ok_or(MeshError::Parse {
                    offset: bytes.len(),
                    msg: format!("missing record {} of element {}", rec, elem.name),
                })?;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if elem.name == "vertex" {
                    if toks.len() < elem.scalars.len() {
                        return Err(MeshError::Format {
                            msg: format!("vertex record {} has too few values", rec),
                        });
                    }
                    let mut coord = [0.0; 3];
                    for (axis, &prop_idx) in xyz.iter().enumerate() {
                        coord[axis] = toks[prop_idx].parse().map_err(|_| MeshError::Format {
                            msg: format!("vertex record {}: bad float {:?}", rec, toks[prop_idx]),
                        })?;
                    }
                    vertices.push(Vector3::new(coord[0], coord[1], coord[2]));
                } else if elem.name == "face" {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or(MeshError::Format { msg: format!("face record {}: bad count", rec) })?;
                    if n != 3 {
                        return Err(MeshError::Format {
                            msg: format!("face {} has {} vertices, only triangles are supported", rec, n),
                        });
                    }
                    let mut idx = [0usize; 3];
                    for k in 0..3 {
                        idx[k] = toks
                            .get(1 + k)
                            .and_then(|t| t.parse().ok())
                            .ok_or(MeshError::Format {
                                msg: format!("face record {}: bad index", rec),
                            })?;
                    }
                    faces.push(idx);
                }
                // records of unknown elements are skipped line-wise
            }
        }
    } else {
        let mut cur = Cursor::new(&bytes[offset..]);
        for elem in &elements {
            for rec in 0..elem.count {
                if elem.name == "vertex" {
                    let mut coord = [0.0; 3];
                    for (prop_idx, (_, ty)) in elem.scalars.iter().enumerate() {
                        let val = ty.read_f64(&mut cur).map_err(|_| MeshError::Parse {
                            offset: offset + cur.position() as usize,
                            msg: format!("truncated vertex record {}", rec),
                        })?;
                        if let Some(axis) = xyz.iter().position(|&p| p == prop_idx) {
                            coord[axis] = val;
                        }
                    }
                    vertices.push(Vector3::new(coord[0], coord[1], coord[2]));
                } else if elem.name == "face" {
                    let (ct, it) = elem.list.unwrap();
                    let n = ct.read_f64(&mut cur).map_err(|_| MeshError::Parse {
                        offset: offset + cur.position() as usize,
                        msg: format!("truncated face record {}", rec),
                    })? as usize;
                    if n != 3 {
                        return Err(MeshError::Format {
                            msg: format!("face {} has {} vertices, only triangles are supported", rec, n),
                        });
                    }
                    let mut idx = [0usize; 3];
                    for slot in &mut idx {
                        *slot = it.read_f64(&mut cur).map_err(|_| MeshError::Parse {
                            offset: offset + cur.position() as usize,
                            msg: format!("truncated face record {}", rec),
                        })? as usize;
                    }
                    faces.push(idx);
                } else {
                    for (_, ty) in &elem.scalars {
                        ty.read_f64(&mut cur).map_err(|_| MeshError::Parse {
                            offset: offset + cur.position() as usize,
                            msg: format!("truncated record in element {}", elem.name),
                        })?;
                    }
                    if let Some((ct, it)) = elem.list {
                        let n = ct.read_f64(&mut cur).map_err(|_| MeshError::Parse {
                            offset: offset + cur.position() as usize,
                            msg: "truncated list record".to_string(),
                        })? as usize;
                        for _ in 0..n {
                            it.read_f64(&mut cur).map_err(|_| MeshError::Parse {
                                offset: offset + cur.position() as usize,
                                msg: "truncated list record".to_string(),
                            })?;
                        }
                    }
                }
            }
        }
    }

    TriangleMesh::from_parts(vertices, faces)
}

/// Writes PLY with optional per-vertex scalar attributes. Floats are
/// formatted shortest-roundtrip in ASCII mode, so output is
/// byte-deterministic.
pub fn write_ply(
    path: impl AsRef<Path>,
    mesh: &TriangleMesh,
    attributes: &[(&str, &[f64])],
    binary: bool,
) -> MeshResult<()> {
    for (name, vals) in attributes {
        if vals.len() != mesh.vertex_count() {
            return Err(MeshError::Validation {
                msg: format!("attribute {} has {} values for {} vertices", name, vals.len(), mesh.vertex_count()),
            });
        }
    }
    let mut out: Vec<u8> = Vec::new();
    writeln!(out, "ply")?;
    writeln!(out, "format {} 1.0", if binary { "binary_little_endian" } else { "ascii" })?;
    writeln!(out, "element vertex {}", mesh.vertex_count())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {}", axis)?;
    }
    for (name, _) in attributes {
        writeln!(out, "property double {}", name)?;
    }
    writeln!(out, "element face {}", mesh.face_count())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;

    if binary {
        for (k, v) in mesh.vertices().iter().enumerate() {
            for i in 0..3 {
                out.write_f64::<LittleEndian>(v[i])?;
            }
            for (_, vals) in attributes {
                out.write_f64::<LittleEndian>(vals[k])?;
            }
        }
        for f in mesh.faces() {
            out.write_u8(3)?;
            for &i in f {
                out.write_i32::<LittleEndian>(i as i32)?;
            }
        }
    } else {
        for (k, v) in mesh.vertices().iter().enumerate() {
            write!(out, "{} {} {}", v[0], v[1], v[2])?;
            for (_, vals) in attributes {
                write!(out, " {}", vals[k])?;
            }
            writeln!(out)?;
        }
        for f in mesh.faces() {
            writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Unit square split along the diagonal into two right triangles.
pub fn two_triangle_square() -> TriangleMesh {
    let vertices = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ];
    let faces = vec![[0, 1, 2], [0, 2, 3]];
    TriangleMesh::from_parts(vertices, faces).expect("square mesh is valid")
}

/// Unit icosphere: icosahedron subdivided `subdiv` times, vertices
/// projected to the unit sphere. subdiv 4 gives 2562 vertices.
pub fn icosphere(subdiv: u32) -> TriangleMesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, t, 0.0),
        Vector3::new(1.0, t, 0.0),
        Vector3::new(-1.0, -t, 0.0),
        Vector3::new(1.0, -t, 0.0),
        Vector3::new(0.0, -1.0, t),
        Vector3::new(0.0, 1.0, t),
        Vector3::new(0.0, -1.0, -t),
        Vector3::new(0.0, 1.0, -t),
        Vector3::new(t, 0.0, -1.0),
        Vector3::new(t, 0.0, 1.0),
        Vector3::new(-t, 0.0, -1.0),
        Vector3::new(-t, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdiv {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) / 2.0).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            next_faces.push([f[0], mid[0], mid[2]]);
            next_faces.push([f[1], mid[1], mid[0]]);
            next_faces.push([f[2], mid[2], mid[1]]);
            next_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = next_faces;
    }

    TriangleMesh::from_parts(vertices, faces).expect("icosphere is valid")
}

/// Torus grid: nu-by-nv quad grid over (u, v) angles, each quad split
/// into two triangles, oriented with outward normals.
pub fn torus_grid(nu: usize, nv: usize, ring_radius: f64, tube_radius: f64) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let mut vertices = Vec::with_capacity(nu * nv);
    for iu in 0..nu {
        let u = 2.0 * std::f64::consts::PI * iu as f64 / nu as f64;
        for iv in 0..nv {
            let v = 2.0 * std::f64::consts::PI * iv as f64 / nv as f64;
            let w = ring_radius + tube_radius * v.cos();
            vertices.push(Vector3::new(w * u.cos(), w * u.sin(), tube_radius * v.sin()));
        }
    }
    let at = |iu: usize, iv: usize| (iu % nu) * nv + (iv % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for iu in 0..nu {
        for iv in 0..nv {
            let a = at(iu, iv);
            let b = at(iu + 1, iv);
            let c = at(iu + 1, iv + 1);
            let d = at(iu, iv + 1);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    (vertices, faces)
}

/// Deterministic test surface with exactly 453 vertices and 908 faces:
/// two torus grids bridged through removed triangles (a closed genus-2
/// surface), then one vertex excised to leave a single 4-edge boundary
/// loop, exercising the Neumann path. Scaled into a small box so
/// gentle sinusoidal test fields vary slowly across it.
pub fn surface453() -> TriangleMesh {
    let (va, fa) = torus_grid(12, 18, 1.0, 0.35);
    let (vb, fb) = torus_grid(12, 20, 1.0, 0.35);
    let dz = 0.55;

    let mut vertices: Vec<Vector3<f64>> = Vec::with_capacity(456);
    vertices.extend(va.iter().map(|v| v + Vector3::new(0.0, 0.0, -dz)));
    vertices.extend(vb.iter().map(|v| v + Vector3::new(0.0, 0.0, dz)));
    let off = 216;

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(912);
    faces.extend(fa.iter().copied());
    faces.extend(fb.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));

    // Quad (0,0) of each grid starts its face list; drop each first
    // triangle (a0,a1,a2) and (b0,b1,b2), then identify the two hole
    // boundaries with reversed orientation so every seam edge pairs up.
    let a = [0usize, 18, 19];
    let b = [off, off + 20, off + 21];
    faces.remove(432);
    faces.remove(0);
    // b0 -> a0, b1 -> a2, b2 -> a1 reverses the hole cycle.
    let seam = |i: usize| -> usize {
        if i == b[0] {
            a[0]
        } else if i == b[1] {
            a[2]
        } else if i == b[2] {
            a[1]
        } else {
            i
        }
    };
    for f in faces.iter_mut() {
        for slot in f.iter_mut() {
            *slot = seam(*slot);
        }
    }
    for (ai, bi) in [(a[0], b[0]), (a[2], b[1]), (a[1], b[2])] {
        vertices[ai] = (vertices[ai] + vertices[bi]) / 2.0;
    }
    // Compact away the three absorbed b-vertices.
    let removed: Vec<usize> = b.to_vec();
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::with_capacity(vertices.len() - 3);
    for (i, v) in vertices.iter().enumerate() {
        if !removed.contains(&i) {
            remap[i] = kept.len();
            kept.push(*v);
        }
    }
    let mut vertices = kept;
    for f in faces.iter_mut() {
        for slot in f.iter_mut() {
            *slot = remap[*slot];
        }
    }

    // Centroid-split a face far from the seam, flip one rim edge so the
    // new vertex reaches degree 4, then excise it with its four faces:
    // net one vertex and two faces added, leaving a 4-edge hole.
    let target = {
        let g = |iu: usize, iv: usize| remap[off + (iu % 12) * 20 + (iv % 20)];
        [g(6, 10), g(7, 11), g(6, 11)]
    };
    let tpos = faces.iter().position(|f| *f == target).expect("split target face present");
    let [p, q, r] = faces[tpos];
    let w = vertices.len();
    vertices.push((vertices[p] + vertices[q] + vertices[r]) / 3.0);
    faces.remove(tpos);
    faces.push([p, q, w]);
    faces.push([q, r, w]);
    faces.push([r, p, w]);
    // Flip shared edge (p, q): faces (p,q,w) and (q,p,c) become
    // (p,c,w) and (c,q,w).
    let outer = faces
        .iter()
        .position(|f| {
            [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].contains(&(q, p))
        })
        .expect("edge (q,p) has an outer face");
    let of = faces[outer];
    let c = if (of[0], of[1]) == (q, p) {
        of[2]
    } else if (of[1], of[2]) == (q, p) {
        of[0]
    } else {
        of[1]
    };
    let inner = faces.iter().position(|f| *f == [p, q, w]).unwrap();
    let (hi, lo) = (inner.max(outer), inner.min(outer));
    faces.remove(hi);
    faces.remove(lo);
    faces.push([p, c, w]);
    faces.push([c, q, w]);

    faces.retain(|f| !f.contains(&w));
    vertices.pop();

    // Fixed generic rotation and a scale that puts the surface in a
    // roughly [-0.1, 0.1] box.
    let axis = Vector3::new(1.0, 2.0, 3.0).normalize();
    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), 0.6);
    let scale = 0.1 / 1.35;
    for v in vertices.iter_mut() {
        *v = rot * (*v * scale);
    }

    TriangleMesh::from_parts(vertices, faces).expect("constructed surface is valid")
}
