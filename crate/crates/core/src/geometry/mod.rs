//! Triangle meshes, ray queries and the conservative distance grid used to
//! size sphere steps.

mod bvh;
mod mesh;
mod sdf;

pub use bvh::{Bvh, Hit, Ray};
pub use mesh::{load_mesh, parse_obj, MeshLoad, TriangleMesh};
pub use sdf::{audit_conservative, brute_force_distance, SdfAudit, SdfGrid, SDF_MAGIC, SDF_VERSION};

use crate::vec3::Vec3;

type V = Vec3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: V,
    pub max: V,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: V::splat(f64::INFINITY), max: V::splat(f64::NEG_INFINITY) }
    }

    pub fn grow(&mut self, p: V) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn union(mut self, o: &Aabb) -> Self {
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
        self
    }

    pub fn is_empty(&self) -> bool {
        !(self.min.x <= self.max.x && self.min.y <= self.max.y && self.min.z <= self.max.z)
    }

    pub fn extent(&self) -> V {
        self.max - self.min
    }

    pub fn center(&self) -> V {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().length()
    }

    pub fn contains(&self, p: V) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Squared distance from `p` to the box, zero inside.
    pub fn distance_sq(&self, p: V) -> f64 {
        (0..3)
            .map(|k| {
                let d = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
                d * d
            })
            .sum()
    }

    /// Slab test; entry distance when the ray overlaps `[0, t_max]`.
    pub fn ray_entry(&self, origin: V, inv_dir: V, t_max: f64) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, t_max);
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf keeps the previous bound
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
        }
        (t0 <= t1).then_some(t0)
    }
}

/// Closest point to `p` on triangle `(a, b, c)` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: V, a: V, b: V, c: V) -> V {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(ap), ac.dot(ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(bp), ac.dot(bp));
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(cp), ac.dot(cp));
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Moller-Trumbore; the hit distance along `dir` when it lies in `(t_min, t_max)`.
pub fn ray_triangle(origin: V, dir: V, a: V, b: V, c: V, t_min: f64, t_max: f64) -> Option<f64> {
    let (e1, e2) = (b - a, c - a);
    let pv = dir.cross(e2);
    let det = e1.dot(pv);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(e1);
    let v = dir.dot(qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qv) * inv;
    (t > t_min && t < t_max).then_some(t)
}

/// Signed solid angle of triangle `(a, b, c)` seen from `p`
/// (Van Oosterom and Strackee).
pub fn solid_angle(p: V, a: V, b: V, c: V) -> f64 {
    let (a, b, c) = (a - p, b - p, c - p);
    let (la, lb, lc) = (a.length(), b.length(), c.length());
    let num = a.dot(b.cross(c));
    let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * num.atan2(den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: minimize over the interior projection and the
    /// three edge segments.
    fn brute_distance(p: V, a: V, b: V, c: V) -> f64 {
        let seg = |u: V, v: V| {
            let d = v - u;
            let t = ((p - u).dot(d) / d.length_squared()).clamp(0.0, 1.0);
            (u + d * t - p).length()
        };
        let mut best = seg(a, b).min(seg(b, c)).min(seg(c, a));
        let n = (b - a).cross(c - a).normalize();
        let q = p - n * (p - a).dot(n);
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|&(u, v)| (v - u).cross(q - u).dot(n) >= 0.0);
        if inside {
            best = best.min((p - q).length());
        }
        best
    }

    fn v3() -> impl Strategy<Value = V> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| V::new(x, y, z))
    }

    proptest! {
        #[test]
        fn closest_point_matches_oracle(p in v3(), a in v3(), b in v3(), c in v3()) {
            prop_assume!((b - a).cross(c - a).length() > 1e-3);
            let q = closest_point_on_triangle(p, a, b, c);
            prop_assert!(((q - p).length() - brute_distance(p, a, b, c)).abs() < 1e-9);
        }

        #[test]
        fn solid_angles_of_closed_surface_sum_to_four_pi(x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5) {
            let m = TriangleMesh::icosphere(1);
            let p = V::new(x, y, z);
            let total: f64 = (0..m.len()).map(|t| { let [a, b, c] = m.vertices(t); solid_angle(p, a, b, c) }).sum();
            prop_assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9);
        }
    }

    #[test]
    fn ray_triangle_basics() {
        let (a, b, c) = (V::new(0.0, 0.0, 1.0), V::new(1.0, 0.0, 1.0), V::new(0.0, 1.0, 1.0));
        let o = V::new(0.2, 0.2, 0.0);
        assert_eq!(ray_triangle(o, V::unit_z(), a, b, c, 0.0, 10.0), Some(1.0));
        assert_eq!(ray_triangle(o, V::unit_z(), a, b, c, 0.0, 0.5), None);
        assert_eq!(ray_triangle(o, -V::unit_z(), a, b, c, 0.0, 10.0), None);
        assert_eq!(ray_triangle(V::new(0.9, 0.9, 0.0), V::unit_z(), a, b, c, 0.0, 10.0), None);
    }

    #[test]
    fn aabb_queries() {
        let mut b = Aabb::empty();
        assert!(b.is_empty());
        b.grow(V::new(-1.0, -1.0, -1.0));
        b.grow(V::new(1.0, 2.0, 3.0));
        assert!(b.contains(V::zero()));
        assert_eq!(b.distance_sq(V::new(3.0, 0.0, 0.0)), 4.0);
        let inv = V::new(1.0, f64::INFINITY, f64::INFINITY);
        assert_eq!(b.ray_entry(V::new(-5.0, 0.0, 0.0), inv, 100.0), Some(4.0));
        assert_eq!(b.ray_entry(V::new(-5.0, 5.0, 0.0), inv, 100.0), None);
    }
}
