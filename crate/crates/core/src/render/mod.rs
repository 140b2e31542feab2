//! Brute-force and sphere-traced volumetric rendering of a homogeneous
//! medium bounded by a triangle mesh.

mod image;
mod scene;
mod trace;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::image::{image_metrics, Image};
pub use scene::{
    Camera, CameraSection, Environment, EnvironmentSection, IntegratorSection, Light, LightSection, MediumSection,
    MeshSection, Scene, SceneFile,
};
pub use trace::{
    nee_full_sum, nee_single_sample, record_path_events, single_sample_nee_weight, trace_bruteforce, trace_path,
    trace_sphere, NeeCheck, PathSample, Tracer, MAX_PATH_EVENTS, MAX_SCALED_SIGMA, MAX_SPHERE_STEPS,
};

use crate::error::{Error, Result};
use crate::rng::{stream, uniform, Domain};
use crate::scatter::ScatterModels;

#[derive(Debug, Clone, Copy)]
pub enum Integrator<'a> {
    PathTracing,
    SphereTracing(&'a ScatterModels<f32>),
}

impl Integrator<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Integrator::PathTracing => "pt",
            Integrator::SphereTracing(_) => "st",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub spp: usize,
    pub seed: u64,
    pub nee: bool,
    /// Overrides the per-channel default smallest sphere radius.
    pub r_min: Option<f64>,
    /// Channels to render; skipped channels stay black.
    pub channels: [bool; 3],
}

impl RenderOptions {
    pub fn new(spp: usize, seed: u64, nee: bool) -> Self {
        Self { spp, seed, nee, r_min: None, channels: [true; 3] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub paths: u64,
    pub steps: u64,
    pub max_steps: u32,
    pub events: u64,
    pub decoder_evals: u64,
    pub spheres_survived: u64,
    pub spheres_absorbed: u64,
    pub dropped_paths: u64,
    /// Paths whose radiance exceeded the incoming-light bound.
    pub energy_violations: u64,
    pub wall_seconds: f64,
    /// Mean sequential steps per path of each pixel, row-major.
    #[serde(skip)]
    pub pixel_mean_steps: Vec<f32>,
}

impl PathStats {
    pub fn mean_steps(&self) -> f64 {
        self.steps as f64 / self.paths.max(1) as f64
    }

    pub fn mean_events(&self) -> f64 {
        self.events as f64 / self.paths.max(1) as f64
    }

    /// Mean of the per-pixel mean step counts over pixels that took any
    /// step, i.e. whose paths met the medium.
    pub fn mean_steps_over_covered_pixels(&self) -> f64 {
        let covered: Vec<f64> = self.pixel_mean_steps.iter().filter(|&&m| m > 0.0).map(|&m| m as f64).collect();
        if covered.is_empty() { 0.0 } else { covered.iter().sum::<f64>() / covered.len() as f64 }
    }

    /// Decoder evaluations implied by the sphere outcomes: two per surviving
    /// step, one per absorbed step, plus one (surviving) or two (absorbed)
    /// per step that also sampled a light-connection event.
    pub fn expected_decoder_evals(&self, nee: bool) -> u64 {
        if nee {
            3 * (self.spheres_survived + self.spheres_absorbed)
        } else {
            2 * self.spheres_survived + self.spheres_absorbed
        }
    }

    fn add(&mut self, p: &PathSample) {
        self.paths += 1;
        self.steps += p.steps as u64;
        self.max_steps = self.max_steps.max(p.steps);
        self.events += p.events;
        self.decoder_evals += p.decoder_evals as u64;
        self.spheres_survived += p.spheres_survived as u64;
        self.spheres_absorbed += p.spheres_absorbed as u64;
        self.dropped_paths += p.dropped as u64;
    }

    fn merge(&mut self, o: &PathStats) {
        self.paths += o.paths;
        self.steps += o.steps;
        self.max_steps = self.max_steps.max(o.max_steps);
        self.events += o.events;
        self.decoder_evals += o.decoder_evals;
        self.spheres_survived += o.spheres_survived;
        self.spheres_absorbed += o.spheres_absorbed;
        self.dropped_paths += o.dropped_paths;
        self.energy_violations += o.energy_violations;
    }
}

/// Stream index of one `(pixel, sample, channel)` path.
pub fn path_stream_index(pixel: usize, spp: usize, sample: usize, channel: usize) -> u64 {
    ((pixel as u64 * spp as u64) + sample as u64) * 3 + channel as u64
}

/// Renders every pixel with `opts.spp` independent paths per channel. The
/// result depends only on the scene, integrator and options.
pub fn render(scene: &Scene, integrator: Integrator<'_>, opts: &RenderOptions) -> Result<(Image, PathStats)> {
    if opts.spp == 0 {
        return Err(Error::Config("samples per pixel must be at least 1".into()));
    }
    if let Some(r) = opts.r_min {
        if !(r > 0.0) {
            return Err(Error::Config(format!("r_min must be positive, got {r}")));
        }
    }
    let start = Instant::now();
    let (w, h) = (scene.camera.width, scene.camera.height);
    let r_min = [0, 1, 2].map(|c| opts.r_min.unwrap_or_else(|| scene.default_r_min(c)));
    let bounds = [0, 1, 2].map(|c| (scene.environment.max_radiance(c), scene.light_bound(c)));

    let rows: Vec<Result<(Vec<[f32; 3]>, Vec<[f32; 3]>, Vec<f32>, PathStats)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut px_out = Vec::with_capacity(w);
            let mut var_out = Vec::with_capacity(w);
            let mut steps_out = Vec::with_capacity(w);
            let mut stats = PathStats::default();
            for x in 0..w {
                let pixel = y * w + x;
                let mut mean = [0f32; 3];
                let mut var = [0f32; 3];
                let mut pixel_steps = 0u64;
                let mut pixel_paths = 0u64;
                for c in (0..3).filter(|&c| opts.channels[c]) {
                    let (mut s, mut s2) = (0.0f64, 0.0f64);
                    for k in 0..opts.spp {
                        let mut rng = stream(opts.seed, Domain::Render, path_stream_index(pixel, opts.spp, k, c));
                        let (jx, jy) = (uniform::<f64, _>(&mut rng), uniform::<f64, _>(&mut rng));
                        let ray = scene.camera.ray(x, y, jx, jy);
                        let p = match integrator {
                            Integrator::PathTracing => trace_bruteforce(scene, ray, c, &mut rng, opts.nee),
                            Integrator::SphereTracing(models) => {
                                trace_sphere(scene, ray, c, &mut rng, models, opts.nee, r_min[c])?
                            }
                        };
                        let bound = bounds[c].0 + p.light_weight * bounds[c].1;
                        if !(p.radiance <= bound * (1.0 + 1e-9) + 1e-12) {
                            stats.energy_violations += 1;
                        }
                        stats.add(&p);
                        pixel_steps += p.steps as u64;
                        pixel_paths += 1;
                        s += p.radiance;
                        s2 += p.radiance * p.radiance;
                    }
                    let n = opts.spp as f64;
                    let m = s / n;
                    mean[c] = m as f32;
                    var[c] = if opts.spp > 1 { ((s2 - n * m * m).max(0.0) / (n - 1.0) / n) as f32 } else { 0.0 };
                }
                px_out.push(mean);
                var_out.push(var);
                steps_out.push(if pixel_paths > 0 { (pixel_steps as f64 / pixel_paths as f64) as f32 } else { 0.0 });
            }
            Ok((px_out, var_out, steps_out, stats))
        })
        .collect();

    let mut img = Image::new(w, h);
    img.spp = opts.spp;
    img.pixels.clear();
    img.variance.clear();
    let mut stats = PathStats::default();
    for row in rows {
        let (p, v, s, st) = row?;
        img.pixels.extend(p);
        img.variance.extend(v);
        stats.pixel_mean_steps.extend(s);
        stats.merge(&st);
    }
    stats.wall_seconds = start.elapsed().as_secs_f64();
    if !img.is_finite() {
        return Err(Error::NonFinite("rendered image".into()));
    }
    Ok((img, stats))
}
