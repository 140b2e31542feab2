use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Aabb;
use crate::error::{Error, Result};
use crate::vec3::{UnitVec3, Vec3};

/// Indexed triangle mesh with counter-clockwise (outward) winding.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    positions: Vec<Vec3<f64>>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<UnitVec3<f64>>,
}

/// Result of ingesting a mesh.
#[derive(Debug, Clone)]
pub struct MeshLoad {
    pub mesh: TriangleMesh,
    /// Zero-area or repeated-index triangles removed at load.
    pub dropped_degenerate: usize,
    /// Every edge is shared by exactly two triangles.
    pub watertight: bool,
}

impl TriangleMesh {
    /// Validates indices and drops degenerate triangles; returns the mesh and
    /// the number dropped.
    pub fn new(positions: Vec<Vec3<f64>>, triangles: Vec<[u32; 3]>) -> Result<(Self, usize)> {
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("vertex {p:?}")));
        }
        let n = positions.len();
        let mut kept = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        let mut dropped = 0;
        for tri in triangles {
            if let Some(&i) = tri.iter().find(|&&i| i as usize >= n) {
                return Err(Error::Config(format!("triangle index {i} out of range ({n} vertices)")));
            }
            let [a, b, c] = tri.map(|i| positions[i as usize]);
            let cross = (b - a).cross(c - a);
            let scale = (b - a).length_squared().max((c - a).length_squared());
            match UnitVec3::try_new(cross) {
                Some(nrm) if cross.length() > 1e-12 * scale && tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] => {
                    kept.push(tri);
                    normals.push(nrm);
                }
                _ => dropped += 1,
            }
        }
        Ok((Self { positions, triangles: kept, normals }, dropped))
    }

    pub fn positions(&self) -> &[Vec3<f64>] {
        &self.positions
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Geometric normal of each triangle, following the winding.
    pub fn normals(&self) -> &[UnitVec3<f64>] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertices(&self, tri: usize) -> [Vec3<f64>; 3] {
        self.triangles[tri].map(|i| self.positions[i as usize])
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for t in &self.triangles {
            for &i in t {
                b.grow(self.positions[i as usize]);
            }
        }
        b
    }

    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&c| c == 2)
    }

    /// `p -> scale * p + offset` for every vertex.
    pub fn transformed(&self, scale: f64, offset: Vec3<f64>) -> Self {
        let positions = self.positions.iter().map(|&p| p * scale + offset).collect();
        let mut normals = self.normals.clone();
        if scale < 0.0 {
            normals.iter_mut().for_each(|n| *n = -*n);
        }
        Self { positions, triangles: self.triangles.clone(), normals }
    }

    /// SHA-256 over vertex and index data.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.positions {
            for v in p.to_array() {
                h.update(v.to_le_bytes());
            }
        }
        for t in &self.triangles {
            for i in t {
                h.update(i.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Geodesic sphere of unit radius around the origin, refined
    /// `subdivisions` times from an icosahedron.
    pub fn icosphere(subdivisions: u32) -> Self {
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        let mut pos: Vec<Vec3<f64>> = [
            (-1.0, p, 0.0), (1.0, p, 0.0), (-1.0, -p, 0.0), (1.0, -p, 0.0),
            (0.0, -1.0, p), (0.0, 1.0, p), (0.0, -1.0, -p), (0.0, 1.0, -p),
            (p, 0.0, -1.0), (p, 0.0, 1.0), (-p, 0.0, -1.0), (-p, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut midpoint = |a: u32, b: u32, pos: &mut Vec<Vec3<f64>>| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    pos.push(((pos[a as usize] + pos[b as usize]) * 0.5).normalize());
                    pos.len() as u32 - 1
                })
            };
            let mut next = Vec::with_capacity(tris.len() * 4);
            for [a, b, c] in tris {
                let ab = midpoint(a, b, &mut pos);
                let bc = midpoint(b, c, &mut pos);
                let ca = midpoint(c, a, &mut pos);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        for t in &mut tris {
            let [a, b, c] = t.map(|i| pos[i as usize]);
            if (b - a).cross(c - a).dot(a + b + c) < 0.0 {
                t.swap(1, 2);
            }
        }
        Self::new(pos, tris).expect("icosphere is valid").0
    }

    pub fn write_obj(&self, mut w: impl Write) -> Result<()> {
        for p in &self.positions {
            writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

/// Reads an OBJ file. Only `v` and `f` records are interpreted; polygons are
/// fan-triangulated.
pub fn load_mesh(path: &Path) -> Result<MeshLoad> {
    let file = std::fs::File::open(path)?;
    parse_obj(BufReader::new(file), path)
}

pub fn parse_obj(reader: impl BufRead, path: &Path) -> Result<MeshLoad> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for v in &mut c {
                    let t = tok.next().ok_or_else(|| err(line_no, "vertex needs three coordinates".into()))?;
                    *v = t.parse().map_err(|_| err(line_no, format!("bad coordinate '{t}'")))?;
                }
                positions.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(4);
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| err(line_no, format!("bad face index '{t}'")))?;
                    let n = positions.len() as i64;
                    let resolved = if raw > 0 { raw - 1 } else { n + raw };
                    if raw == 0 || resolved < 0 || resolved >= n {
                        return Err(err(line_no, format!("face index {raw} out of range ({n} vertices so far)")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err(line_no, "face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let (mesh, dropped_degenerate) = TriangleMesh::new(positions, triangles)?;
    if mesh.is_empty() {
        return Err(Error::Format(format!("{}: mesh has no triangles", path.display())));
    }
    if dropped_degenerate > 0 {
        log::warn!("{}: dropped {dropped_degenerate} degenerate triangles", path.display());
    }
    let watertight = mesh.is_watertight();
    if !watertight {
        log::warn!("{}: mesh is not watertight; inside tests use winding numbers", path.display());
    }
    Ok(MeshLoad { mesh, dropped_degenerate, watertight })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<MeshLoad> {
        parse_obj(s.as_bytes(), Path::new("test.obj"))
    }

    #[test]
    fn icosphere_counts_and_closure() {
        for k in 0..4 {
            let m = TriangleMesh::icosphere(k);
            assert_eq!(m.len(), 20 * 4usize.pow(k));
            assert_eq!(m.positions().len(), 10 * 4usize.pow(k) + 2);
            assert!(m.is_watertight());
            for (t, n) in m.normals().iter().enumerate() {
                let [a, b, c] = m.vertices(t);
                assert!(n.dot(UnitVec3::new_normalize(a + b + c)) > 0.9);
            }
        }
    }

    #[test]
    fn obj_round_trip() {
        let m = TriangleMesh::icosphere(1);
        let mut buf = Vec::new();
        m.write_obj(&mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.mesh.len(), m.len());
        assert_eq!(back.mesh.positions().len(), m.positions().len());
        assert_eq!(back.dropped_degenerate, 0);
        assert!(back.watertight);
        assert_eq!(back.mesh.triangles(), m.triangles());
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n";
        let l = parse(src).unwrap();
        assert_eq!(l.mesh.len(), 1);
        assert_eq!(l.dropped_degenerate, 1);
        assert!(!l.watertight);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\n# c\nf 1 2 7\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, .. }), "{e}");
        let e = parse("v 0 0 zero\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse("v 0 0 0\nf 1 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(parse("# empty\n").is_err());
    }

    #[test]
    fn quads_negative_indices_and_slashes() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf -4/1/1 -3/2/1 -2/3/1 -1/4/1\n";
        let l = parse(src).unwrap();
        assert_eq!(l.mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        assert!((l.mesh.normals()[0].z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = TriangleMesh::icosphere(1);
        let b = a.transformed(1.0, Vec3::new(0.0, 0.0, 1e-9));
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
