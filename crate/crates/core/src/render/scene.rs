use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{load_mesh, Bvh, Ray, SdfGrid, TriangleMesh};
use crate::optics::{HenyeyGreenstein, MediumParams};
use crate::vec3::{UnitVec3, Vec3};

type V = Vec3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Light {
    /// Isotropic point source; irradiance falls off with the squared distance.
    Point { position: V, power: [f64; 3] },
    /// Parallel illumination travelling along `direction`.
    Directional { direction: UnitVec3<f64>, irradiance: [f64; 3] },
}

/// Background radiance blending from `nadir` to `zenith` along `up`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    pub up: UnitVec3<f64>,
    pub zenith: [f64; 3],
    pub nadir: [f64; 3],
}

impl Environment {
    pub fn uniform(radiance: [f64; 3]) -> Self {
        Self { up: UnitVec3::new_normalize(V::unit_y()), zenith: radiance, nadir: radiance }
    }

    pub fn radiance(&self, dir: UnitVec3<f64>, channel: usize) -> f64 {
        let s = 0.5 * (1.0 + self.up.dot(dir));
        self.nadir[channel] + (self.zenith[channel] - self.nadir[channel]) * s
    }

    pub fn max_radiance(&self, channel: usize) -> f64 {
        self.zenith[channel].max(self.nadir[channel])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: V,
    right: V,
    up: V,
    forward: V,
    tan_half_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// `fov_deg` is the vertical field of view.
    pub fn look_at(position: V, target: V, up: V, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("camera resolution must be at least 1x1".into()));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::Config(format!("field of view {fov_deg} outside (0, 180)")));
        }
        let forward = (target - position)
            .try_normalize()
            .ok_or_else(|| Error::Config("camera position equals look-at point".into()))?;
        let right = forward
            .cross(up)
            .try_normalize()
            .ok_or_else(|| Error::Config("camera up vector is parallel to the view direction".into()))?;
        let up = right.cross(forward);
        let tan_half_fov = (0.5 * fov_deg.to_radians()).tan();
        Ok(Self { position, right, up, forward, tan_half_fov, width, height })
    }

    /// Ray through image position `(px + jx, py + jy)`; row 0 is the top.
    pub fn ray(&self, px: usize, py: usize, jx: f64, jy: f64) -> Ray {
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + jx) / self.width as f64 - 1.0) * self.tan_half_fov * aspect;
        let sy = (1.0 - 2.0 * (py as f64 + jy) / self.height as f64) * self.tan_half_fov;
        Ray::new(self.position, UnitVec3::new_normalize(self.forward + self.right * sx + self.up * sy))
    }
}

/// A homogeneous medium bounded by a mesh, lit by a light and an
/// environment.
#[derive(Debug, Clone)]
pub struct Scene {
    pub bvh: Bvh,
    pub sdf: SdfGrid,
    pub media: [MediumParams<f64>; 3],
    pub phases: [HenyeyGreenstein<f64>; 3],
    pub light: Option<Light>,
    pub environment: Environment,
    pub camera: Camera,
    /// Integrator settings carried by scene files.
    pub options: IntegratorSection,
    /// Camera starts inside the medium.
    pub camera_inside: bool,
}

impl Scene {
    pub fn new(
        mesh: TriangleMesh,
        media: [MediumParams<f64>; 3],
        light: Option<Light>,
        environment: Environment,
        camera: Camera,
        sdf_resolution: usize,
    ) -> Result<Self> {
        let bvh = Bvh::build(mesh);
        let sdf = SdfGrid::build(&bvh, sdf_resolution)?;
        Self::with_sdf(bvh, sdf, media, light, environment, camera)
    }

    pub fn with_sdf(
        bvh: Bvh,
        sdf: SdfGrid,
        media: [MediumParams<f64>; 3],
        light: Option<Light>,
        environment: Environment,
        camera: Camera,
    ) -> Result<Self> {
        for m in &media {
            MediumParams::new(m.sigma_t, m.g, m.phi)?;
        }
        let phases = media.map(|m| m.phase());
        let camera_inside = bvh.is_inside(camera.position);
        Ok(Self {
            bvh,
            sdf,
            media,
            phases,
            light,
            environment,
            camera,
            options: IntegratorSection::default(),
            camera_inside,
        })
    }

    /// Parses a scene file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file = SceneFile::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.build(base)
    }

    /// Upper bound of one light contribution per unit weight in `channel`,
    /// infinite when the light can reach the medium at zero distance.
    pub fn light_bound(&self, channel: usize) -> f64 {
        let g = self.media[channel].g.abs();
        let rho_max = (1.0 + g) / (4.0 * std::f64::consts::PI * (1.0 - g).powi(2));
        match self.light {
            None => 0.0,
            Some(Light::Directional { irradiance, .. }) => irradiance[channel] * rho_max,
            Some(Light::Point { position, power }) => {
                let d2 = self.bvh.bounds().distance_sq(position);
                if d2 > 0.0 {
                    power[channel] * rho_max / d2
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// On-disk scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub mesh: MeshSection,
    pub medium: MediumSection,
    #[serde(default)]
    pub light: Option<LightSection>,
    #[serde(default)]
    pub environment: Option<EnvironmentSection>,
    pub camera: CameraSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub path: PathBuf,
    /// Rescales the mesh so its extent along the environment up axis equals
    /// this height, in meters.
    #[serde(default)]
    pub height: Option<f64>,
    /// Moves the center of the bounding box here after scaling.
    #[serde(default)]
    pub center: Option<[f64; 3]>,
    /// SDF cache file, rebuilt when stale.
    #[serde(default)]
    pub sdf_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSection {
    /// Per channel, 1/m.
    pub sigma_t: [f64; 3],
    pub g: [f64; 3],
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "lowercase")]
pub enum LightSection {
    Point { position: [f64; 3], power: [f64; 3] },
    Directional { direction: [f64; 3], irradiance: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub zenith: [f64; 3],
    pub nadir: [f64; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_spp")]
    pub spp: usize,
    #[serde(default)]
    pub nee: bool,
    /// Smallest sphere radius in meters; derived from the medium when unset.
    #[serde(default)]
    pub r_min: Option<f64>,
    #[serde(default = "default_sdf_resolution")]
    pub sdf_resolution: usize,
    /// Directory holding the three model bundles.
    #[serde(default)]
    pub models: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_spp() -> usize {
    64
}

fn default_sdf_resolution() -> usize {
    64
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self { spp: default_spp(), nee: false, r_min: None, sdf_resolution: default_sdf_resolution(), models: None, seed: 0 }
    }
}

fn v3(a: [f64; 3]) -> V {
    V::new(a[0], a[1], a[2])
}

impl SceneFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text.as_bytes()[..s.start.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1);
            Error::Parse { path: path.to_path_buf(), line, msg: e.message().to_string() }
        })
    }

    pub fn build(&self, base: &Path) -> Result<Scene> {
        let mesh_path = base.join(&self.mesh.path);
        let mut mesh = load_mesh(&mesh_path)?.mesh;
        let env = match &self.environment {
            Some(e) => Environment {
                up: UnitVec3::try_new(v3(e.up)).ok_or_else(|| Error::Config("environment up is zero".into()))?,
                zenith: e.zenith,
                nadir: e.nadir,
            },
            None => Environment::uniform([1.0; 3]),
        };
        if let Some(h) = self.mesh.height {
            if !(h > 0.0) {
                return Err(Error::Config(format!("mesh height must be positive, got {h}")));
            }
            let ext = mesh.bounds().extent();
            let along = ext.x * env.up.x.abs() + ext.y * env.up.y.abs() + ext.z * env.up.z.abs();
            mesh = mesh.transformed(h / along, V::zero());
        }
        if let Some(c) = self.mesh.center {
            mesh = mesh.transformed(1.0, v3(c) - mesh.bounds().center());
        }
        let m = &self.medium;
        let media = [0, 1, 2].map(|c| MediumParams { sigma_t: m.sigma_t[c], g: m.g[c], phi: m.albedo[c] });
        let light = match &self.light {
            None => None,
            Some(LightSection::Point { position, power }) => Some(Light::Point { position: v3(*position), power: *power }),
            Some(LightSection::Directional { direction, irradiance }) => Some(Light::Directional {
                direction: UnitVec3::try_new(v3(*direction)).ok_or_else(|| Error::Config("light direction is zero".into()))?,
                irradiance: *irradiance,
            }),
        };
        let c = &self.camera;
        let camera = Camera::look_at(v3(c.position), v3(c.look_at), v3(c.up), c.fov, c.width, c.height)?;
        let bvh = Bvh::build(mesh);
        let res = self.integrator.sdf_resolution;
        let sdf = match &self.mesh.sdf_cache {
            Some(p) => SdfGrid::load_or_build(&bvh, res, &base.join(p))?,
            None => SdfGrid::build(&bvh, res)?,
        };
        let mut scene = Scene::with_sdf(bvh, sdf, media, light, env, camera)?;
        scene.options = self.integrator.clone();
        if let Some(dir) = &scene.options.models {
            scene.options.models = Some(base.join(dir));
        }
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = r#"
[mesh]
path = "sphere.obj"
height = 2.0

[medium]
sigma_t = [1.0, 2.0, 3.0]
g = [0.0, 0.5, -0.5]
albedo = [1.0, 0.9, 0.5]

[light]
type = "point"
position = [3.0, 3.0, 3.0]
power = [1.0, 1.0, 1.0]

[camera]
position = [0.0, 0.0, 4.0]
look_at = [0.0, 0.0, 0.0]
fov = 30
width = 8
height = 6

[integrator]
sdf_resolution = 8
"#;

    fn write_scene(dir: &Path, text: &str) -> PathBuf {
        let mut f = std::fs::File::create(dir.join("sphere.obj")).unwrap();
        TriangleMesh::icosphere(2).write_obj(&mut f).unwrap();
        let p = dir.join("scene.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_and_normalizes_height() {
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene::load(&write_scene(dir.path(), SRC)).unwrap();
        assert!((scene.bvh.bounds().extent().y - 2.0).abs() < 1e-12);
        assert_eq!(scene.media[2].phi, 0.5);
        assert_eq!(scene.camera.width, 8);
        assert!(!scene.camera_inside);
        assert!(matches!(scene.light, Some(Light::Point { .. })));
        assert_eq!(scene.options.spp, 64);
        assert!(scene.light_bound(0).is_finite());
    }

    #[test]
    fn errors_carry_locations() {
        let dir = tempfile::tempdir().unwrap();
        let bad = SRC.replace("fov = 30", "fov = \"wide\"");
        match Scene::load(&write_scene(dir.path(), &bad)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 19),
            other => panic!("unexpected {other:?}"),
        }
        let bad = SRC.replace("albedo = [1.0, 0.9, 0.5]", "albedo = [1.0, 0.9, 1.5]");
        assert!(matches!(Scene::load(&write_scene(dir.path(), &bad)), Err(Error::Domain(_))));
        let bad = SRC.replace("[integrator]", "[integrator]\nbogus = 1");
        assert!(matches!(Scene::load(&write_scene(dir.path(), &bad)), Err(Error::Parse { .. })));
    }

    #[test]
    fn camera_rays() {
        let cam = Camera::look_at(V::new(0.0, 0.0, 5.0), V::zero(), V::unit_y(), 90.0, 2, 2).unwrap();
        let center = cam.ray(1, 1, 0.0, 0.0);
        assert!((center.dir.get() - V::new(0.0, 0.0, -1.0)).length() < 1e-12);
        let corner = cam.ray(0, 0, 0.0, 0.0);
        assert!((corner.dir.get() - V::new(-1.0, 1.0, -1.0).normalize()).length() < 1e-12);
        assert!(Camera::look_at(V::zero(), V::zero(), V::unit_y(), 45.0, 1, 1).is_err());
        assert!(Camera::look_at(V::zero(), V::unit_y(), V::unit_y(), 45.0, 1, 1).is_err());
    }

    #[test]
    fn environment_gradient() {
        let env = Environment { up: UnitVec3::new_normalize(V::unit_y()), zenith: [1.0, 2.0, 3.0], nadir: [0.0; 3] };
        assert_eq!(env.radiance(UnitVec3::new_normalize(V::unit_y()), 2), 3.0);
        assert_eq!(env.radiance(UnitVec3::new_normalize(-V::unit_y()), 2), 0.0);
        assert_eq!(env.radiance(UnitVec3::z(), 1), 1.0);
    }
}
