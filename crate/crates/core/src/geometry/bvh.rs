use super::{closest_point_on_triangle, ray_triangle, solid_angle, Aabb, TriangleMesh};
use crate::vec3::{UnitVec3, Vec3};

type V = Vec3<f64>;

const LEAF_SIZE: usize = 4;

/// Fixed, non-axis-aligned directions for parity votes.
const PARITY_DIRS: [[f64; 3]; 3] = [
    [0.5773, 0.5774, 0.5774],
    [-0.2673, 0.8018, -0.5345],
    [0.8165, -0.4082, -0.4083],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: V,
    pub dir: UnitVec3<f64>,
    pub t_max: f64,
}

impl Ray {
    pub fn new(origin: V, dir: UnitVec3<f64>) -> Self {
        Self { origin, dir, t_max: f64::INFINITY }
    }

    pub fn at(&self, t: f64) -> V {
        self.origin + self.dir.get() * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
    /// Follows the triangle winding (outward for a closed mesh).
    pub geometric_normal: UnitVec3<f64>,
    /// Geometric normal flipped to face the incoming ray.
    pub normal: UnitVec3<f64>,
    /// The ray arrives from the side the geometric normal points to.
    pub front_face: bool,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`. Interior: left child (right is +1).
    first: u32,
    /// Zero for interior nodes.
    count: u32,
}

/// Bounding volume hierarchy over an owned mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
    watertight: bool,
    t_eps: f64,
}

impl Bvh {
    pub fn build(mesh: TriangleMesh) -> Self {
        let n = mesh.len();
        let bounds: Vec<Aabb> = (0..n)
            .map(|t| {
                let mut b = Aabb::empty();
                mesh.vertices(t).iter().for_each(|&p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<V> = bounds.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = vec![Node { bounds: Aabb::empty(), first: 0, count: n as u32 }];
        let mut stack = vec![(0usize, 0usize, n)];
        while let Some((node, lo, hi)) = stack.pop() {
            let b = order[lo..hi].iter().fold(Aabb::empty(), |acc, &t| acc.union(&bounds[t as usize]));
            nodes[node].bounds = b;
            if hi - lo <= LEAF_SIZE {
                nodes[node].first = lo as u32;
                nodes[node].count = (hi - lo) as u32;
                continue;
            }
            let mut cb = Aabb::empty();
            order[lo..hi].iter().for_each(|&t| cb.grow(centroids[t as usize]));
            let ext = cb.extent();
            let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
            let mid = (lo + hi) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
            });
            let left = nodes.len();
            nodes.push(Node { bounds: Aabb::empty(), first: 0, count: 0 });
            nodes.push(Node { bounds: Aabb::empty(), first: 0, count: 0 });
            nodes[node].first = left as u32;
            nodes[node].count = 0;
            stack.push((left, lo, mid));
            stack.push((left + 1, mid, hi));
        }
        let watertight = mesh.is_watertight();
        let t_eps = 1e-6 * nodes[0].bounds.diagonal().max(f64::MIN_POSITIVE);
        Self { mesh, nodes, order, watertight, t_eps }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// Smallest accepted hit distance; suppresses self-intersection.
    pub fn t_epsilon(&self) -> f64 {
        self.t_eps
    }

    fn make_hit(&self, ray: &Ray, t: f64, tri: u32) -> Hit {
        let g = self.mesh.normals()[tri as usize];
        let front_face = g.dot(ray.dir) < 0.0;
        Hit { t, triangle: tri, geometric_normal: g, normal: if front_face { g } else { -g }, front_face }
    }

    fn tri_hit(&self, ray: &Ray, tri: u32, t_min: f64, t_max: f64) -> Option<f64> {
        let [a, b, c] = self.mesh.vertices(tri as usize);
        ray_triangle(ray.origin, ray.dir.get(), a, b, c, t_min, t_max)
    }

    /// Visits every leaf triangle whose node the ray reaches before the
    /// current bound returned by `visit`.
    fn traverse(&self, ray: &Ray, mut visit: impl FnMut(u32) -> f64) {
        let d = ray.dir.get();
        let inv = V::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut bound = ray.t_max;
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds.ray_entry(ray.origin, inv, bound).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    bound = bound.min(visit(t));
                }
            } else {
                stack[sp] = node.first;
                stack[sp + 1] = node.first + 1;
                sp += 2;
            }
        }
    }

    /// Nearest hit with `t` in `(t_epsilon, ray.t_max)`.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        self.intersect_from(ray, self.t_eps)
    }

    /// Nearest hit with `t` in `(t_min, ray.t_max)`. Transport rays whose
    /// origin is off the surface pass 0 so that no crossing is skipped.
    pub fn intersect_from(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        let mut best: Option<(f64, u32)> = None;
        self.traverse(ray, |tri| {
            let limit = best.map_or(ray.t_max, |b| b.0);
            if let Some(t) = self.tri_hit(ray, tri, t_min, limit) {
                best = Some((t, tri));
            }
            best.map_or(ray.t_max, |b| b.0)
        });
        best.map(|(t, tri)| self.make_hit(ray, t, tri))
    }

    /// Reference implementation testing every triangle.
    pub fn intersect_brute(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<(f64, u32)> = None;
        for tri in 0..self.mesh.len() as u32 {
            let limit = best.map_or(ray.t_max, |b| b.0);
            if let Some(t) = self.tri_hit(ray, tri, self.t_eps, limit) {
                best = Some((t, tri));
            }
        }
        best.map(|(t, tri)| self.make_hit(ray, t, tri))
    }

    /// Number of surface crossings along the whole ray.
    pub fn count_crossings(&self, ray: &Ray) -> usize {
        let mut n = 0;
        self.traverse(ray, |tri| {
            if self.tri_hit(ray, tri, self.t_eps, ray.t_max).is_some() {
                n += 1;
            }
            ray.t_max
        });
        n
    }

    /// Distance to the surface and the closest triangle.
    pub fn closest(&self, p: V) -> (f64, u32) {
        self.closest_from(p, None)
    }

    /// As [`Bvh::closest`], seeding the search with a triangle that is
    /// likely near `p` so that more of the tree is pruned.
    pub fn closest_from(&self, p: V, hint: Option<u32>) -> (f64, u32) {
        let mut best = (f64::INFINITY, 0u32);
        if let Some(t) = hint.filter(|&t| (t as usize) < self.mesh.len()) {
            let [a, b, c] = self.mesh.vertices(t as usize);
            best = ((closest_point_on_triangle(p, a, b, c) - p).length_squared(), t);
        }
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node.bounds.distance_sq(p) >= best.0 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    let [a, b, c] = self.mesh.vertices(t as usize);
                    let d2 = (closest_point_on_triangle(p, a, b, c) - p).length_squared();
                    if d2 < best.0 {
                        best = (d2, t);
                    }
                }
            } else {
                // nearer child first
                let (l, r) = (node.first, node.first + 1);
                let dl = self.nodes[l as usize].bounds.distance_sq(p);
                let dr = self.nodes[r as usize].bounds.distance_sq(p);
                if dl < dr {
                    stack.extend([r, l]);
                } else {
                    stack.extend([l, r]);
                }
            }
        }
        (best.0.sqrt(), best.1)
    }

    pub fn distance(&self, p: V) -> f64 {
        self.closest(p).0
    }

    /// Generalized winding number; about 1 inside a closed outward mesh.
    pub fn winding_number(&self, p: V) -> f64 {
        let total: f64 = (0..self.mesh.len())
            .map(|t| {
                let [a, b, c] = self.mesh.vertices(t);
                solid_angle(p, a, b, c)
            })
            .sum();
        total / (4.0 * std::f64::consts::PI)
    }

    /// Majority vote of three parity rays on watertight meshes, winding
    /// number otherwise.
    pub fn is_inside(&self, p: V) -> bool {
        if !self.watertight {
            return self.winding_number(p) > 0.5;
        }
        if !self.bounds().contains(p) {
            return false;
        }
        let votes = PARITY_DIRS
            .iter()
            .filter(|d| {
                let dir = UnitVec3::new_normalize(V::new(d[0], d[1], d[2]));
                self.count_crossings(&Ray::new(p, dir)) % 2 == 1
            })
            .count();
        votes >= 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, uniform, Domain};

    fn rand_unit(rng: &mut crate::rng::StreamRng) -> UnitVec3<f64> {
        let z = 1.0 - 2.0 * uniform::<f64, _>(rng);
        let phi = std::f64::consts::TAU * uniform::<f64, _>(rng);
        let s = (1.0 - z * z).sqrt();
        UnitVec3::new_normalize(V::new(s * phi.cos(), s * phi.sin(), z))
    }

    #[test]
    fn rays_from_center_hit_at_unit_distance() {
        let bvh = Bvh::build(TriangleMesh::icosphere(3));
        let mut rng = stream(1, Domain::Audit, 0);
        for _ in 0..1000 {
            let h = bvh.intersect(&Ray::new(V::zero(), rand_unit(&mut rng))).unwrap();
            // facet sagitta of a level-3 icosphere is below 0.01
            assert!(h.t <= 1.0 + 1e-12 && h.t > 0.99, "{}", h.t);
            assert!(!h.front_face);
            assert!(h.normal.dot(h.geometric_normal) < 0.0);
        }
    }

    #[test]
    fn zero_t_min_keeps_near_surface_crossings() {
        let bvh = Bvh::build(TriangleMesh::icosphere(3));
        let d = UnitVec3::new_normalize(V::new(0.3, 0.2, 0.9));
        let h = bvh.intersect(&Ray::new(V::zero(), d)).unwrap();
        let gap = 0.25 * bvh.t_epsilon();
        let near = Ray::new(d.get() * (h.t - gap), d);
        assert!(bvh.intersect(&near).is_none());
        let g = bvh.intersect_from(&near, 0.0).unwrap();
        assert!((g.t - gap).abs() < 1e-9 && !g.front_face);
    }

    #[test]
    fn misses_outside_bounds() {
        let bvh = Bvh::build(TriangleMesh::icosphere(2));
        assert!(bvh.intersect(&Ray::new(V::new(5.0, 5.0, 5.0), UnitVec3::z())).is_none());
        // off-axis so the ray avoids the mesh vertex on the z axis
        let o = V::new(0.013, 0.007, -5.0);
        let r = Ray { t_max: 3.0, ..Ray::new(o, UnitVec3::z()) };
        assert!(bvh.intersect(&r).is_none());
        let h = bvh.intersect(&Ray::new(o, UnitVec3::z())).unwrap();
        assert!(h.front_face && (h.t - 4.0).abs() < 0.01);
    }

    #[test]
    fn matches_brute_force() {
        let mesh = TriangleMesh::icosphere(3).transformed(1.3, V::new(0.2, -0.1, 0.4));
        let bvh = Bvh::build(mesh);
        let mut rng = stream(2, Domain::Audit, 0);
        for i in 0..10_000 {
            let o = V::new(
                4.0 * uniform::<f64, _>(&mut rng) - 2.0,
                4.0 * uniform::<f64, _>(&mut rng) - 2.0,
                4.0 * uniform::<f64, _>(&mut rng) - 2.0,
            );
            let mut ray = Ray::new(o, rand_unit(&mut rng));
            if i % 3 == 0 {
                ray.t_max = 2.0 * uniform::<f64, _>(&mut rng);
            }
            let (a, b) = (bvh.intersect(&ray), bvh.intersect_brute(&ray));
            assert_eq!(a.map(|h| (h.t, h.triangle)), b.map(|h| (h.t, h.triangle)));
        }
    }

    #[test]
    fn closest_and_inside_tests_agree_with_sphere() {
        let bvh = Bvh::build(TriangleMesh::icosphere(3));
        let mut rng = stream(3, Domain::Audit, 0);
        for _ in 0..300 {
            let p = V::new(
                3.0 * uniform::<f64, _>(&mut rng) - 1.5,
                3.0 * uniform::<f64, _>(&mut rng) - 1.5,
                3.0 * uniform::<f64, _>(&mut rng) - 1.5,
            );
            let r = p.length();
            let brute = (0..bvh.mesh().len())
                .map(|t| {
                    let [a, b, c] = bvh.mesh().vertices(t);
                    (closest_point_on_triangle(p, a, b, c) - p).length()
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(bvh.distance(p), brute);
            if (r - 1.0).abs() > 0.02 {
                assert_eq!(bvh.is_inside(p), r < 1.0);
                let w = bvh.winding_number(p);
                assert!((w - if r < 1.0 { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }
}
