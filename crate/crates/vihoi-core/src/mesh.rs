//! Triangle meshes, watertight primitive constructors, and a minimal ASCII
//! OBJ round trip.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::math::{add, cross, dot, mat_vec, norm, scale, sub, Mat3, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ObjectMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Box,
    Cylinder,
    LampComposite,
    TableComposite,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::Box,
        PrimitiveKind::Cylinder,
        PrimitiveKind::LampComposite,
        PrimitiveKind::TableComposite,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PrimitiveKind::Box => "box",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::LampComposite => "lamp_composite",
            PrimitiveKind::TableComposite => "table_composite",
        }
    }

    /// Short noun used in text annotations.
    pub fn noun(&self) -> &'static str {
        match self {
            PrimitiveKind::Box => "box",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::LampComposite => "lamp",
            PrimitiveKind::TableComposite => "table",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimitiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(PrimitiveKind::Box),
            "cylinder" => Ok(PrimitiveKind::Cylinder),
            "lamp_composite" | "lamp" => Ok(PrimitiveKind::LampComposite),
            "table_composite" | "table" => Ok(PrimitiveKind::TableComposite),
            other => Err(Error::BadDims(format!("unknown primitive kind {other:?}"))),
        }
    }
}

impl ObjectMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, name: impl Into<String>) -> Result<Self> {
        let mesh = Self { vertices, faces, name: name.into() };
        for f in &mesh.faces {
            for &v in f {
                if v >= mesh.vertices.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "face references vertex {v} of {}",
                        mesh.vertices.len()
                    )));
                }
            }
        }
        Ok(mesh)
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn aabb_half_diagonal(&self) -> f64 {
        let (lo, hi) = self.aabb();
        norm(scale(sub(hi, lo), 0.5))
    }

    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let e1 = sub(self.vertices[b], self.vertices[a]);
                let e2 = sub(self.vertices[c], self.vertices[a]);
                0.5 * norm(cross(e1, e2))
            })
            .sum()
    }

    /// Signed volume by the divergence theorem; positive for outward winding.
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                dot(self.vertices[a], cross(self.vertices[b], self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Closed orientable surface test: every directed edge appears exactly
    /// once and its reverse exactly once.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for &[a, b, c] in &self.faces {
            if a == b || b == c || a == c {
                return false;
            }
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *directed.entry((u, v)).or_insert(0) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(u, v), &n)| n == 1 && directed.get(&(v, u)) == Some(&1))
    }

    pub fn require_watertight(&self) -> Result<()> {
        if self.is_watertight() {
            Ok(())
        } else {
            Err(Error::NotWatertight(self.name.clone()))
        }
    }

    /// Rigidly posed copy: v -> rot * v + transl.
    pub fn transformed(&self, rot: &Mat3, transl: Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| add(mat_vec(rot, *v), transl)).collect(),
            faces: self.faces.clone(),
            name: self.name.clone(),
        }
    }

    pub fn translated(&self, t: Vec3) -> Self {
        self.transformed(&crate::math::MAT3_IDENTITY, t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| scale(*v, s)).collect(),
            faces: self.faces.clone(),
            name: self.name.clone(),
        }
    }

    /// Canonical form independent of vertex and face ordering: vertices are
    /// sorted lexicographically, faces rotated to start at their smallest
    /// index (preserving winding) and then sorted.
    pub fn canonicalized(&self) -> Self {
        let mut order: Vec<usize> = (0..self.vertices.len()).collect();
        order.sort_by(|&i, &j| {
            self.vertices[i]
                .partial_cmp(&self.vertices[j])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut remap = vec![0usize; self.vertices.len()];
        for (new_idx, &old_idx) in order.iter().enumerate() {
            remap[old_idx] = new_idx;
        }
        let vertices: Vec<Vec3> = order.iter().map(|&i| self.vertices[i]).collect();
        let mut faces: Vec<[usize; 3]> = self
            .faces
            .iter()
            .map(|&[a, b, c]| {
                let f = [remap[a], remap[b], remap[c]];
                let min_pos = (0..3).min_by_key(|&k| f[k]).unwrap();
                [f[min_pos], f[(min_pos + 1) % 3], f[(min_pos + 2) % 3]]
            })
            .collect();
        faces.sort();
        Self { vertices, faces, name: self.name.clone() }
    }

    /// Stable digest of the canonical geometry, independent of input order.
    pub fn geometry_hash(&self) -> u64 {
        let canon = self.canonicalized();
        let mut h = Sha256::new();
        for v in &canon.vertices {
            for k in 0..3 {
                h.update(v[k].to_le_bytes());
            }
        }
        for f in &canon.faces {
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# {}", self.name)?;
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let name = path
            .as_ref()
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh".to_string());
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for line in r.lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut v = [0.0; 3];
                    for k in 0..3 {
                        v[k] = it
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| Error::msg(format!("bad vertex line {line:?}")))?;
                    }
                    vertices.push(v);
                }
                Some("f") => {
                    let mut f = [0usize; 3];
                    for k in 0..3 {
                        let field = it
                            .next()
                            .ok_or_else(|| Error::msg(format!("bad face line {line:?}")))?;
                        // only the vertex index of v/vt/vn references
                        let idx: usize = field
                            .split('/')
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| Error::msg(format!("bad face line {line:?}")))?;
                        f[k] = idx - 1;
                    }
                    faces.push(f);
                }
                _ => {}
            }
        }
        Self::new(vertices, faces, name)
    }
}

/// Appends `other` to `base` as an independent shell.
fn append_shell(base: &mut ObjectMesh, other: &ObjectMesh) {
    let off = base.vertices.len();
    base.vertices.extend_from_slice(&other.vertices);
    base.faces
        .extend(other.faces.iter().map(|&[a, b, c]| [a + off, b + off, c + off]));
}

fn check_dims(dims: &[f64], want: usize, kind: &str) -> Result<()> {
    if dims.len() != want {
        return Err(Error::BadDims(format!("{kind} wants {want} dims, got {}", dims.len())));
    }
    if dims.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
        return Err(Error::BadDims(format!("{kind} dims must be positive, got {dims:?}")));
    }
    Ok(())
}

/// Axis-aligned box spanning x in [-w/2, w/2], y in [y0, y0+h], z in [-d/2, d/2].
fn box_mesh_at(w: f64, h: f64, d: f64, x0: f64, y0: f64, z0: f64, name: &str) -> ObjectMesh {
    let hx = w / 2.0;
    let hz = d / 2.0;
    let v = |x: f64, y: f64, z: f64| [x0 + x, y0 + y, z0 + z];
    let vertices = vec![
        v(-hx, 0.0, -hz),
        v(hx, 0.0, -hz),
        v(hx, 0.0, hz),
        v(-hx, 0.0, hz),
        v(-hx, h, -hz),
        v(hx, h, -hz),
        v(hx, h, hz),
        v(-hx, h, hz),
    ];
    // outward winding, checked by the watertight and positive-volume tests
    let faces = vec![
        [0, 1, 2],
        [0, 2, 3], // bottom
        [4, 6, 5],
        [4, 7, 6], // top
        [0, 5, 1],
        [0, 4, 5], // -z
        [3, 2, 6],
        [3, 6, 7], // +z
        [1, 6, 2],
        [1, 5, 6], // +x
        [0, 3, 7],
        [0, 7, 4], // -x
    ];
    ObjectMesh { vertices, faces, name: name.to_string() }
}

/// Closed cylinder with axis +y, base circle at y0, `segs` side segments.
fn cylinder_mesh_at(r: f64, h: f64, y0: f64, segs: usize, name: &str) -> ObjectMesh {
    let mut vertices = Vec::with_capacity(2 * segs + 2);
    for ring in 0..2 {
        let y = y0 + h * ring as f64;
        for s in 0..segs {
            let a = std::f64::consts::TAU * s as f64 / segs as f64;
            vertices.push([r * a.cos(), y, r * a.sin()]);
        }
    }
    let bottom_center = vertices.len();
    vertices.push([0.0, y0, 0.0]);
    let top_center = vertices.len();
    vertices.push([0.0, y0 + h, 0.0]);
    let mut faces = Vec::with_capacity(4 * segs);
    for s in 0..segs {
        let n = (s + 1) % segs;
        // side quad, outward winding
        faces.push([s, s + segs, n]);
        faces.push([n, s + segs, n + segs]);
        // caps
        faces.push([bottom_center, s, n]);
        faces.push([top_center, n + segs, s + segs]);
    }
    ObjectMesh { vertices, faces, name: name.to_string() }
}

pub const CYLINDER_SEGMENTS: usize = 64;

/// Watertight primitive in canonical pose: centered in x and z, resting on
/// the y = 0 plane.
///
/// Dims per kind: box [w, h, d]; cylinder [r, h]; lamp_composite [w, h];
/// table_composite [w, h, d]. Composites are unions of closed shells with the
/// joints slightly embedded so winding-number queries stay consistent.
pub fn make_primitive(kind: PrimitiveKind, dims: &[f64]) -> Result<ObjectMesh> {
    match kind {
        PrimitiveKind::Box => {
            check_dims(dims, 3, "box")?;
            Ok(box_mesh_at(dims[0], dims[1], dims[2], 0.0, 0.0, 0.0, "box"))
        }
        PrimitiveKind::Cylinder => {
            check_dims(dims, 2, "cylinder")?;
            Ok(cylinder_mesh_at(dims[0], dims[1], 0.0, CYLINDER_SEGMENTS, "cylinder"))
        }
        PrimitiveKind::LampComposite => {
            check_dims(dims, 2, "lamp_composite")?;
            let (w, h) = (dims[0], dims[1]);
            let mut mesh = cylinder_mesh_at(0.5 * w, 0.08 * h, 0.0, CYLINDER_SEGMENTS, "lamp_composite");
            // pole sinks into the base and the shade to keep the union solid
            let pole = cylinder_mesh_at(0.08 * w, 0.70 * h, 0.04 * h, 16, "pole");
            let shade = cylinder_mesh_at(0.35 * w, 0.30 * h, 0.70 * h, CYLINDER_SEGMENTS, "shade");
            append_shell(&mut mesh, &pole);
            append_shell(&mut mesh, &shade);
            Ok(mesh)
        }
        PrimitiveKind::TableComposite => {
            check_dims(dims, 3, "table_composite")?;
            let (w, h, d) = (dims[0], dims[1], dims[2]);
            let top_h = 0.10 * h;
            let mut mesh = box_mesh_at(w, top_h, d, 0.0, h - top_h, 0.0, "table_composite");
            let leg_w = 0.10 * w;
            let leg_d = 0.10 * d;
            // legs reach into the top slab
            let leg_h = h - top_h / 2.0;
            for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                let cx = sx * (w / 2.0 - leg_w / 2.0 - 0.02 * w);
                let cz = sz * (d / 2.0 - leg_d / 2.0 - 0.02 * d);
                let leg = box_mesh_at(leg_w, leg_h, leg_d, cx, 0.0, cz, "leg");
                append_shell(&mut mesh, &leg);
            }
            Ok(mesh)
        }
    }
}

/// Latitude/longitude sphere, watertight, centered at `center`. Mostly a test
/// fixture for analytic distance oracles.
pub fn make_uv_sphere(center: Vec3, r: f64, stacks: usize, slices: usize) -> ObjectMesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut vertices = vec![add(center, [0.0, r, 0.0])];
    for i in 1..stacks {
        let phi = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = std::f64::consts::TAU * j as f64 / slices as f64;
            vertices.push(add(
                center,
                [r * phi.sin() * theta.cos(), r * phi.cos(), r * phi.sin() * theta.sin()],
            ));
        }
    }
    let south = vertices.len();
    vertices.push(add(center, [0.0, -r, 0.0]));
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j + 1), ring(1, j)]);
        faces.push([south, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let a = ring(i, j);
            let b = ring(i, j + 1);
            let c = ring(i + 1, j);
            let d = ring(i + 1, j + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    ObjectMesh { vertices, faces, name: "uv_sphere".to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_has_8_vertices_12_triangles() {
        let m = make_primitive(PrimitiveKind::Box, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        let (lo, hi) = m.aabb();
        assert_eq!(lo, [-0.5, 0.0, -0.5]);
        assert_eq!(hi, [0.5, 1.0, 0.5]);
        assert!((m.volume() - 1.0).abs() < 1e-12);
        assert!((m.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_volume_matches_closed_form_within_1pct() {
        let (r, h) = (0.3, 0.8);
        let m = make_primitive(PrimitiveKind::Cylinder, &[r, h]).unwrap();
        let want = std::f64::consts::PI * r * r * h;
        let got = m.volume();
        assert!((got - want).abs() / want < 0.01, "volume {got} vs {want}");
    }

    #[test]
    fn all_primitives_are_watertight_and_positive_volume() {
        let cases = [
            (PrimitiveKind::Box, vec![0.3, 0.25, 0.2]),
            (PrimitiveKind::Cylinder, vec![0.1, 0.4]),
            (PrimitiveKind::LampComposite, vec![0.3, 0.7]),
            (PrimitiveKind::TableComposite, vec![0.7, 0.5, 0.4]),
        ];
        for (kind, dims) in cases {
            let m = make_primitive(kind, &dims).unwrap();
            assert!(m.is_watertight(), "{kind} not watertight");
            assert!(m.volume() > 0.0, "{kind} volume {}", m.volume());
            let (lo, hi) = m.aabb();
            assert!(lo[1].abs() < 1e-12, "{kind} floats above floor: {}", lo[1]);
            assert!(hi[1] > 0.0);
        }
    }

    #[test]
    fn bad_dims_are_rejected() {
        assert!(matches!(
            make_primitive(PrimitiveKind::Box, &[1.0, -1.0, 1.0]),
            Err(Error::BadDims(_))
        ));
        assert!(matches!(
            make_primitive(PrimitiveKind::Cylinder, &[1.0]),
            Err(Error::BadDims(_))
        ));
    }

    #[test]
    fn sphere_is_watertight_with_expected_volume() {
        let m = make_uv_sphere([0.0, 0.0, 0.0], 1.0, 24, 48);
        assert!(m.is_watertight());
        let want = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((m.volume() - want).abs() / want < 0.02);
    }

    #[test]
    fn canonicalization_is_order_invariant() {
        let m = make_primitive(PrimitiveKind::Box, &[1.0, 2.0, 3.0]).unwrap();
        let mut shuffled = m.clone();
        shuffled.vertices.reverse();
        let n = m.vertices.len();
        for f in shuffled.faces.iter_mut() {
            for v in f.iter_mut() {
                *v = n - 1 - *v;
            }
            f.rotate_left(1);
        }
        shuffled.faces.reverse();
        assert_eq!(m.geometry_hash(), shuffled.geometry_hash());
        let a = m.canonicalized();
        let b = shuffled.canonicalized();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.faces, b.faces);
        // winding survives canonicalization
        assert!((b.volume() - m.volume()).abs() < 1e-12);
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.obj");
        let m = make_primitive(PrimitiveKind::TableComposite, &[0.8, 0.5, 0.5]).unwrap();
        m.save_obj(&path).unwrap();
        let back = ObjectMesh::load_obj(&path).unwrap();
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.vertices.len(), m.vertices.len());
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        assert!(back.is_watertight());
    }
}
