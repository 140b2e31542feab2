use rand::Rng;

use super::scene::{Light, Scene};
use crate::error::Result;
use crate::geometry::{Hit, Ray};
use crate::optics::free_path;
use crate::rng::uniform;
use crate::scatter::ScatterModels;
use crate::vec3::{UnitVec3, Vec3};
use crate::walker::{ScatterEvent, VACUUM_SIGMA_T};

type V = Vec3<f64>;

/// Brute-force paths are dropped after this many collisions.
pub const MAX_PATH_EVENTS: u32 = 1_000_000;
/// Sphere-traced paths are dropped after this many sequential steps.
pub const MAX_SPHERE_STEPS: u32 = 100_000;
/// Models are trained on unit spheres with extinction up to this value.
pub const MAX_SCALED_SIGMA: f64 = 200.0;

/// Outcome of one path in one channel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathSample {
    pub radiance: f64,
    /// Sequential steps: collisions for path tracing, collisions plus
    /// sphere steps for sphere tracing.
    pub steps: u32,
    /// Physical scattering events, including those inside sphere steps.
    pub events: u64,
    pub decoder_evals: u32,
    pub spheres_survived: u32,
    pub spheres_absorbed: u32,
    /// Sum of the weights multiplying light contributions, for bounds.
    pub light_weight: f64,
    pub dropped: bool,
}

/// How the medium interior is traversed.
#[derive(Debug, Clone, Copy)]
pub enum Tracer<'a> {
    Brute,
    Sphere {
        models: &'a ScatterModels<f32>,
        /// Smallest radius for which a sphere step is attempted.
        r_min: f64,
    },
}

impl Scene {
    /// Continues `ray` just past the surface it hits at `h`, so that the
    /// next query starts unambiguously on the far side.
    fn crossed(&self, ray: &Ray, h: &Hit) -> Ray {
        Ray::new(ray.at(h.t) - h.normal.get() * self.bvh.t_epsilon(), ray.dir)
    }

    /// Length of the segment from `x` (inside the medium) along `dir` up to
    /// `dist` that lies inside the mesh.
    fn in_medium_length(&self, x: V, dir: UnitVec3<f64>, dist: f64) -> f64 {
        let mut inside = true;
        let mut total = 0.0;
        let mut ray = Ray { t_max: dist, ..Ray::new(x, dir) };
        let mut travelled = 0.0;
        for _ in 0..10_000 {
            match self.bvh.intersect_from(&ray, 0.0) {
                Some(h) => {
                    if inside {
                        total += h.t;
                    }
                    inside = !inside;
                    travelled += h.t;
                    ray.origin = self.crossed(&ray, &h).origin;
                    ray.t_max = dist - travelled;
                }
                None => {
                    if inside && dist.is_finite() {
                        total += ray.t_max;
                    }
                    return total;
                }
            }
        }
        total
    }

    /// Single-scattered light reaching a scattering event at `x` whose
    /// incoming direction is `w`: `Phi rho(w, w_L) gamma / d^2` for a point
    /// light, with `gamma` the transmittance of the in-medium part of the
    /// shadow segment.
    pub fn light_contribution(&self, x: V, w: UnitVec3<f64>, channel: usize) -> f64 {
        let m = &self.media[channel];
        match self.light {
            None => 0.0,
            Some(Light::Point { position, power }) => {
                let d = position - x;
                let dist = d.length();
                let Some(to_light) = UnitVec3::try_new(d) else { return 0.0 };
                let rho = self.phases[channel].eval(w.dot(to_light));
                let gamma = (-m.sigma_t * self.in_medium_length(x, to_light, dist)).exp();
                power[channel] * rho * gamma / (dist * dist)
            }
            Some(Light::Directional { direction, irradiance }) => {
                let to_light = -direction;
                let rho = self.phases[channel].eval(w.dot(to_light));
                let gamma = (-m.sigma_t * self.in_medium_length(x, to_light, f64::INFINITY)).exp();
                irradiance[channel] * rho * gamma
            }
        }
    }

    /// Default smallest sphere radius: two mean free paths, at least one
    /// and a half voxels.
    pub fn default_r_min(&self, channel: usize) -> f64 {
        let s = self.media[channel].sigma_t;
        let mfp = if s > 0.0 { 2.0 / s } else { f64::INFINITY };
        mfp.max(1.5 * self.sdf.voxel_size())
    }
}

fn free_flight<R: Rng + ?Sized>(sigma_t: f64, rng: &mut R) -> f64 {
    if sigma_t > 0.0 {
        free_path(sigma_t, uniform::<f64, _>(rng))
    } else {
        f64::INFINITY
    }
}

/// Traces one path of `channel` starting with `ray`. Boundaries are
/// index-matched; light leaves the scene through the environment or, with
/// `nee`, through explicit connections at every scattering event.
pub fn trace_path<R: Rng + ?Sized>(
    scene: &Scene,
    mut ray: Ray,
    channel: usize,
    rng: &mut R,
    nee: bool,
    tracer: Tracer<'_>,
) -> Result<PathSample> {
    let m = scene.media[channel];
    let phase = scene.phases[channel];
    let mut out = PathSample::default();
    let mut inside = scene.camera_inside;
    loop {
        if !inside {
            match scene.bvh.intersect_from(&ray, 0.0) {
                None => {
                    out.radiance += scene.environment.radiance(ray.dir, channel);
                    return Ok(out);
                }
                Some(h) => {
                    ray = scene.crossed(&ray, &h);
                    inside = true;
                    continue;
                }
            }
        }
        let t = free_flight(m.sigma_t, rng);
        if let Some(h) = scene.bvh.intersect_from(&Ray { t_max: t, ..ray }, 0.0) {
            ray = scene.crossed(&ray, &h);
            inside = false;
            continue;
        }
        let x = ray.at(t);
        out.steps += 1;
        if let Tracer::Sphere { models, r_min } = tracer {
            if out.steps > MAX_SPHERE_STEPS {
                out.dropped = true;
                out.radiance = 0.0;
                return Ok(out);
            }
            let r = scene.sdf.query_safe_radius(x).min(MAX_SCALED_SIGMA / m.sigma_t);
            if m.sigma_t > VACUUM_SIGMA_T && r > r_min {
                let step = models.sphere_step(m.sigma_t, m.g, m.phi, ray.dir, x, r, nee, rng)?;
                out.decoder_evals += step.decoder_evals;
                out.events += step.n_events;
                if let Some(e) = step.event {
                    out.radiance += e.lambda * scene.light_contribution(e.position, e.direction, channel);
                    out.light_weight += e.lambda;
                }
                if step.absorbed {
                    out.spheres_absorbed += 1;
                    return Ok(out);
                }
                out.spheres_survived += 1;
                ray = Ray::new(step.exit_position, step.exit_direction);
                continue;
            }
        } else if out.steps > MAX_PATH_EVENTS {
            out.dropped = true;
            out.radiance = 0.0;
            return Ok(out);
        }
        out.events += 1;
        if uniform::<f64, _>(rng) >= m.phi {
            return Ok(out);
        }
        if nee {
            out.radiance += scene.light_contribution(x, ray.dir, channel);
            out.light_weight += 1.0;
        }
        let (u1, u2) = (uniform(rng), uniform(rng));
        ray = Ray::new(x, phase.sample(ray.dir, u1, u2));
    }
}

/// Ground-truth volumetric path tracing.
pub fn trace_bruteforce<R: Rng + ?Sized>(scene: &Scene, ray: Ray, channel: usize, rng: &mut R, nee: bool) -> PathSample {
    trace_path(scene, ray, channel, rng, nee, Tracer::Brute).expect("brute-force tracing has no failure modes")
}

/// Learned sphere tracing with free-flight fallback below `r_min`.
pub fn trace_sphere<R: Rng + ?Sized>(
    scene: &Scene,
    ray: Ray,
    channel: usize,
    rng: &mut R,
    models: &ScatterModels<f32>,
    nee: bool,
    r_min: f64,
) -> Result<PathSample> {
    trace_path(scene, ray, channel, rng, nee, Tracer::Sphere { models, r_min })
}

/// Records the scattering events of one analog path with albedo forced to
/// one until it leaves the medium or hits the event cap. Returns `None` when
/// the ray misses the medium.
pub fn record_path_events<R: Rng + ?Sized>(
    scene: &Scene,
    mut ray: Ray,
    channel: usize,
    rng: &mut R,
) -> Option<Vec<ScatterEvent<f64>>> {
    let m = scene.media[channel];
    if !scene.camera_inside {
        let h = scene.bvh.intersect_from(&ray, 0.0)?;
        ray = scene.crossed(&ray, &h);
    }
    let mut events = Vec::new();
    while events.len() < MAX_PATH_EVENTS as usize {
        let t = free_flight(m.sigma_t, rng);
        if scene.bvh.intersect_from(&Ray { t_max: t, ..ray }, 0.0).is_some() {
            break;
        }
        let x = ray.at(t);
        events.push(ScatterEvent { position: x, incoming: ray.dir });
        let (u1, u2) = (uniform(rng), uniform(rng));
        ray = Ray::new(x, scene.phases[channel].sample(ray.dir, u1, u2));
    }
    Some(events)
}

/// Full per-event light estimate `sum_k phi^k f_k`.
pub fn nee_full_sum(values: &[f64], phi: f64) -> f64 {
    let mut w = 1.0;
    values
        .iter()
        .map(|&f| {
            w *= phi;
            w * f
        })
        .sum()
}

/// One representative draw `Lambda f_k`, with `k` chosen with probability
/// `phi^k / Lambda`.
pub fn nee_single_sample<R: Rng + ?Sized>(values: &[f64], phi: f64, rng: &mut R) -> f64 {
    let mut lambda = 0.0;
    let mut w = 1.0;
    let cdf: Vec<f64> = values
        .iter()
        .map(|_| {
            w *= phi;
            lambda += w;
            lambda
        })
        .collect();
    if lambda <= 0.0 {
        return 0.0;
    }
    let u = uniform::<f64, _>(rng) * lambda;
    let k = cdf.partition_point(|&c| c <= u).min(values.len() - 1);
    lambda * values[k]
}

/// Compares the single-representative estimator against the full sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeeCheck {
    pub full_sum: f64,
    pub single_mean: f64,
    pub single_variance: f64,
    pub resamples: usize,
}

impl NeeCheck {
    pub fn relative_error(&self) -> f64 {
        if self.full_sum == 0.0 {
            self.single_mean.abs()
        } else {
            (self.single_mean - self.full_sum).abs() / self.full_sum.abs()
        }
    }
}

/// Averages `resamples` single-representative draws for per-event light
/// values `values`.
pub fn single_sample_nee_weight<R: Rng + ?Sized>(values: &[f64], phi: f64, resamples: usize, rng: &mut R) -> NeeCheck {
    let full_sum = nee_full_sum(values, phi);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..resamples {
        let v = nee_single_sample(values, phi, rng);
        s += v;
        s2 += v * v;
    }
    let n = resamples.max(1) as f64;
    let mean = s / n;
    NeeCheck { full_sum, single_mean: mean, single_variance: (s2 / n - mean * mean).max(0.0), resamples }
}
