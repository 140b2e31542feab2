//! Conservative signed distance grid.
//!
//! Each voxel stores the exact distance from its center to the surface
//! minus half the voxel diagonal, clamped at zero, so the ball of that radius
//! around any point of the voxel misses the surface. The sign bit marks
//! voxels whose center is inside (`-0.0` for inside voxels at the surface).

use std::path::Path;

use rayon::prelude::*;

use super::{closest_point_on_triangle, Bvh};
use crate::error::{Error, Result};
use crate::rng::{stream, uniform, Domain};
use crate::vec3::Vec3;

type V = Vec3<f64>;

pub const SDF_MAGIC: &[u8; 4] = b"SSDF";
pub const SDF_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 12 + 24 + 8 + 4 + 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    origin: V,
    voxel_size: f64,
    dims: [usize; 3],
    resolution: usize,
    values: Vec<f32>,
    mesh_fingerprint: [u8; 32],
}

/// Largest `f32` not above `v`, for `v >= 0`.
fn f32_down(v: f64) -> f32 {
    let f = v as f32;
    if f as f64 > v && f > 0.0 {
        f32::from_bits(f.to_bits() - 1)
    } else {
        f
    }
}

impl SdfGrid {
    /// `resolution` voxels along the longest axis of the mesh bounds, plus
    /// one voxel of padding on every side.
    pub fn build(bvh: &Bvh, resolution: usize) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::Config(format!("SDF resolution {resolution} is below 8")));
        }
        if !bvh.is_watertight() {
            log::warn!("mesh is not watertight; SDF signs use winding numbers");
        }
        let b = bvh.bounds();
        let ext = b.extent();
        let voxel_size = ext.max_elem() / resolution as f64;
        if !(voxel_size > 0.0) {
            return Err(Error::Config("mesh bounds are degenerate".into()));
        }
        let dims = [0, 1, 2].map(|k| (ext[k] / voxel_size).ceil().max(1.0) as usize + 2);
        let origin = b.min - V::splat(voxel_size);
        let margin = 0.5 * voxel_size * 3f64.sqrt();
        let mut grid = Self {
            origin,
            voxel_size,
            dims,
            resolution,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
            mesh_fingerprint: bvh.mesh().fingerprint(),
        };
        // Rows along x: each voxel seeds its nearest-triangle search with its
        // predecessor's, and inherits its sign when the predecessor's empty
        // ball already contains it.
        let nx = dims[0];
        let rows: Vec<(usize, usize)> = (0..dims[2]).flat_map(|k| (0..dims[1]).map(move |j| (j, k))).collect();
        let g = &grid;
        grid.values = rows
            .par_iter()
            .flat_map_iter(|&(j, k)| {
                let mut hint = None;
                let mut prev: Option<(f64, bool)> = None;
                (0..nx).map(move |i| {
                    let c = g.voxel_center(i, j, k);
                    let (d, t) = bvh.closest_from(c, hint);
                    hint = Some(t);
                    let inside = match prev {
                        Some((pd, pin)) if pd > voxel_size => pin,
                        _ => bvh.is_inside(c),
                    };
                    prev = Some((d, inside));
                    let mag = f32_down((d - margin).max(0.0));
                    if inside { -mag } else { mag }
                })
            })
            .collect();
        Ok(grid)
    }

    /// Reuses the grid cached at `path` when it was built from the same mesh
    /// at the same resolution; otherwise rebuilds and rewrites it.
    pub fn load_or_build(bvh: &Bvh, resolution: usize, path: &Path) -> Result<Self> {
        if let Ok(bytes) = std::fs::read(path) {
            match Self::from_bytes(&bytes) {
                Ok(g) if g.mesh_fingerprint == bvh.mesh().fingerprint() && g.resolution == resolution => {
                    return Ok(g);
                }
                Ok(_) => log::info!("{}: stale SDF cache, rebuilding", path.display()),
                Err(e) => log::warn!("{}: unreadable SDF cache ({e}), rebuilding", path.display()),
            }
        }
        let g = Self::build(bvh, resolution)?;
        g.save(path)?;
        Ok(g)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> V {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mesh_fingerprint(&self) -> [u8; 32] {
        self.mesh_fingerprint
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> V {
        self.origin + V::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    fn index_of(&self, p: V) -> Option<usize> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2]))
    }

    /// Raw stored value of the voxel containing `p`.
    pub fn value_at(&self, p: V) -> Option<f32> {
        self.index_of(p).map(|i| self.values[i])
    }

    /// Whether the center of the voxel containing `p` is inside the mesh.
    pub fn is_inside(&self, p: V) -> bool {
        self.value_at(p).is_some_and(|v| v.is_sign_negative())
    }

    /// Radius of a ball around `p` that misses the surface; zero outside the
    /// medium or the grid.
    pub fn query_safe_radius(&self, p: V) -> f64 {
        match self.value_at(p) {
            Some(v) if v.is_sign_negative() => -(v as f64),
            _ => 0.0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.values.len());
        out.extend_from_slice(SDF_MAGIC);
        out.extend_from_slice(&SDF_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for o in self.origin.to_array() {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out.extend_from_slice(&self.voxel_size.to_le_bytes());
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        out.extend_from_slice(&self.mesh_fingerprint);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_BYTES || &b[..4] != SDF_MAGIC {
            return Err(Error::Format("not an SDF grid".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != SDF_VERSION {
            return Err(Error::Version { expected: SDF_VERSION, found: version });
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let origin = V::new(f64_at(20), f64_at(28), f64_at(36));
        let voxel_size = f64_at(44);
        let resolution = u32_at(52) as usize;
        let mut mesh_fingerprint = [0u8; 32];
        mesh_fingerprint.copy_from_slice(&b[56..88]);
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if n.and_then(|n| n.checked_mul(4)) != Some(b.len() - HEADER_BYTES) {
            return Err(Error::Format(format!("SDF grid {dims:?} does not match {} data bytes", b.len() - HEADER_BYTES)));
        }
        if !(voxel_size > 0.0) || !origin.is_finite() {
            return Err(Error::Format("invalid SDF placement".into()));
        }
        let values = b[HEADER_BYTES..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { origin, voxel_size, dims, resolution, values, mesh_fingerprint })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Result of checking safe radii against the exact surface distance.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SdfAudit {
    /// Interior points checked.
    pub samples: usize,
    /// Balls that reach the surface; must be zero.
    pub violations: usize,
    /// Smallest `distance - radius` over the checked points.
    pub min_margin: f64,
    pub mean_radius: f64,
    /// Points with a zero safe radius.
    pub zero_radius: usize,
}

/// Exact distance from `p` to the surface by a scan over all triangles.
pub fn brute_force_distance(bvh: &Bvh, p: V) -> f64 {
    let mesh = bvh.mesh();
    (0..mesh.len())
        .map(|t| {
            let [a, b, c] = mesh.vertices(t);
            (closest_point_on_triangle(p, a, b, c) - p).length()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Draws `samples` points uniformly inside the mesh and checks that the
/// ball of the queried radius around each misses every triangle.
pub fn audit_conservative(bvh: &Bvh, sdf: &SdfGrid, samples: usize, seed: u64) -> Result<SdfAudit> {
    let b = bvh.bounds();
    let ext = b.extent();
    let mut rng = stream(seed, Domain::Audit, 0);
    let mut points = Vec::with_capacity(samples);
    let max_attempts = 1000 * samples.max(1);
    let mut attempts = 0;
    while points.len() < samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config("mesh encloses too little volume to sample interior points".into()));
        }
        let u = [0; 3].map(|_| uniform::<f64, _>(&mut rng));
        let p = b.min + V::new(u[0] * ext.x, u[1] * ext.y, u[2] * ext.z);
        if bvh.is_inside(p) {
            points.push(p);
        }
    }
    let checked: Vec<(f64, f64)> = points
        .par_iter()
        .map(|&p| (sdf.query_safe_radius(p), brute_force_distance(bvh, p)))
        .collect();
    Ok(SdfAudit {
        samples,
        violations: checked.iter().filter(|(r, d)| r > d || (*r > 0.0 && r == d)).count(),
        min_margin: checked.iter().map(|(r, d)| d - r).fold(f64::INFINITY, f64::min),
        mean_radius: checked.iter().map(|c| c.0).sum::<f64>() / samples.max(1) as f64,
        zero_radius: checked.iter().filter(|c| c.0 == 0.0).count(),
    })
}
