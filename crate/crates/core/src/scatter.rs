//! Inference-time sphere sampler: event count, absorption, exit and
//! representative event, with the transforms between the canonical walk frame
//! (entry along +z, exit at zero azimuth) and world space.

use std::path::Path;

use rand::Rng;

use crate::cvae::{CvaeModel, ModelKind};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::optics::absorption_prob;
use crate::rng::uniform;
use crate::vec3::{Frame, UnitVec3, Vec3};
use crate::walker::{exit_frame, ExitCoords, VACUUM_SIGMA_T};

/// Largest representative-event radius in the canonical unit sphere.
pub const MAX_EVENT_RADIUS: f64 = 0.999;

/// Representative scattering event of a sphere step, in world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub position: Vec3<f64>,
    pub direction: UnitVec3<f64>,
    /// `sum_{k=1}^N phi^k`.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereStepOutcome {
    pub absorbed: bool,
    pub n_events: u64,
    /// Meaningless when `absorbed`.
    pub exit_position: Vec3<f64>,
    /// Meaningless when `absorbed`.
    pub exit_direction: UnitVec3<f64>,
    pub event: Option<StepEvent>,
    /// Number of decoder evaluations spent on this step.
    pub decoder_evals: u32,
}

/// Rotation taking the canonical frame to world space: `R_cvae * R_psi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalRotation {
    frame: Frame<f64>,
    cos_psi: f64,
    sin_psi: f64,
}

impl CanonicalRotation {
    /// `w_in` is where canonical `+z` goes; `psi` rotates about it.
    pub fn new(w_in: UnitVec3<f64>, psi: f64) -> Self {
        let (sin_psi, cos_psi) = psi.sin_cos();
        Self { frame: Frame::from_normal(w_in), cos_psi, sin_psi }
    }

    pub fn apply(&self, v: Vec3<f64>) -> Vec3<f64> {
        let r = Vec3::new(
            self.cos_psi * v.x - self.sin_psi * v.y,
            self.sin_psi * v.x + self.cos_psi * v.y,
            v.z,
        );
        self.frame.to_world(r)
    }
}

pub fn rescale_sigma(sigma_t: f64, r_sphere: f64) -> f64 {
    sigma_t * r_sphere
}

/// Bernoulli absorption draw: `u < 1 - phi^N`.
pub fn test_absorption(n_events: u64, phi: f64, u: f64) -> bool {
    u < absorption_prob(n_events, phi)
}

/// Clamps `cos theta` and projects `(alpha, beta)` into the unit disk.
pub fn sanitize_exit(c: ExitCoords<f64>) -> ExitCoords<f64> {
    let r2 = c.alpha * c.alpha + c.beta * c.beta;
    let s = if r2 > 1.0 { r2.sqrt().recip() } else { 1.0 };
    ExitCoords { cos_theta: c.cos_theta.clamp(-1.0, 1.0), alpha: c.alpha * s, beta: c.beta * s }
}

/// World exit point and direction for canonical exit coordinates.
pub fn to_world(
    c: ExitCoords<f64>,
    w_in: UnitVec3<f64>,
    center: Vec3<f64>,
    r_sphere: f64,
    psi: f64,
) -> (Vec3<f64>, UnitVec3<f64>) {
    exit_to_world(c, w_in, &CanonicalRotation::new(w_in, psi), center, r_sphere)
}

fn exit_to_world(
    c: ExitCoords<f64>,
    w_in: UnitVec3<f64>,
    rot: &CanonicalRotation,
    center: Vec3<f64>,
    r_sphere: f64,
) -> (Vec3<f64>, UnitVec3<f64>) {
    let c = sanitize_exit(c);
    let sin_theta = (1.0 - c.cos_theta * c.cos_theta).max(0.0).sqrt();
    let x_hat = UnitVec3::new_normalize(rot.apply(Vec3::new(sin_theta, 0.0, c.cos_theta)));
    let (n, b, t) = exit_frame(w_in, x_hat);
    let normal = (1.0 - c.alpha * c.alpha - c.beta * c.beta).max(0.0).sqrt();
    let dir = UnitVec3::new_normalize(b * c.alpha + t * c.beta + n * normal);
    (center + x_hat.get() * r_sphere, dir)
}

/// Projects a decoded position inside the unit ball and normalizes the
/// direction.
pub fn sanitize_event(x: Vec3<f64>, w: Vec3<f64>) -> (Vec3<f64>, UnitVec3<f64>) {
    let len = x.length();
    let x = if len >= MAX_EVENT_RADIUS { x * (MAX_EVENT_RADIUS / len) } else { x };
    let w = UnitVec3::try_new(w).unwrap_or_else(UnitVec3::z);
    (x, w)
}

/// The three trained decoders used at render time.
#[derive(Debug, Clone)]
pub struct ScatterModels<T> {
    pub length: CvaeModel<T>,
    pub path: CvaeModel<T>,
    pub event: CvaeModel<T>,
}

impl<T: Real> ScatterModels<T> {
    pub fn new(length: CvaeModel<T>, path: CvaeModel<T>, event: CvaeModel<T>) -> Result<Self> {
        for (m, k) in [(&length, ModelKind::LengthGen), (&path, ModelKind::PathGen), (&event, ModelKind::EventGen)] {
            if m.kind != k {
                return Err(Error::Config(format!("expected a {k} model, got {}", m.kind)));
            }
            m.validate()?;
        }
        Ok(Self { length, path, event })
    }

    /// Loads `lengthgen.ssnn`, `pathgen.ssnn` and `eventgen.ssnn` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |k: ModelKind| CvaeModel::load(&dir.join(k.file_name())).map(CvaeModel::without_encoder);
        Self::new(load(ModelKind::LengthGen)?, load(ModelKind::PathGen)?, load(ModelKind::EventGen)?)
    }

    /// Decodes one sample, retrying once on a non-finite output.
    fn draw<R: Rng + ?Sized, const N: usize>(
        model: &CvaeModel<T>,
        cond: &[f64],
        rng: &mut R,
    ) -> Result<[f64; N]> {
        let c: smallvec::SmallVec<[T; 8]> = cond.iter().map(|&v| T::lit(v)).collect();
        let mut out = [T::zero(); N];
        for _ in 0..2 {
            model.sample(&c, rng, &mut out)?;
            if out.iter().all(|v| v.is_finite()) {
                return Ok(out.map(|v| v.as_f64()));
            }
        }
        Err(Error::NonFinite(format!("{} decoder output for condition {cond:?}", model.kind)))
    }

    /// Number of scattering events `N >= 1` in a sphere of scaled extinction
    /// `sigma_t_scaled`. A vacuum sphere always yields one event.
    pub fn sample_num_events<R: Rng + ?Sized>(&self, sigma_t_scaled: f64, g: f64, rng: &mut R) -> Result<u64> {
        if sigma_t_scaled <= VACUUM_SIGMA_T {
            return Ok(1);
        }
        let norm = &self.length.norm;
        let [t] = Self::draw::<R, 1>(&self.length, &norm.length_condition(sigma_t_scaled, g), rng)?;
        Ok(norm.n_events_inv(t))
    }

    pub fn sample_exit<R: Rng + ?Sized>(&self, sigma_t_scaled: f64, g: f64, n: u64, rng: &mut R) -> Result<ExitCoords<f64>> {
        let cond = self.path.norm.path_condition(sigma_t_scaled, g, n.max(1));
        let [cos_theta, alpha, beta] = Self::draw::<R, 3>(&self.path, &cond, rng)?;
        Ok(sanitize_exit(ExitCoords { cos_theta, alpha, beta }))
    }

    /// Representative event in the canonical frame of a unit sphere.
    pub fn sample_event<R: Rng + ?Sized>(
        &self,
        sigma_t_scaled: f64,
        g: f64,
        phi: f64,
        exit: ExitCoords<f64>,
        n: u64,
        rng: &mut R,
    ) -> Result<(Vec3<f64>, UnitVec3<f64>)> {
        let cond = self.event.norm.event_condition(
            sigma_t_scaled, g, phi, exit.cos_theta, exit.alpha, exit.beta, n.max(1),
        );
        let [x0, x1, x2, w0, w1, w2] = Self::draw::<R, 6>(&self.event, &cond, rng)?;
        Ok(sanitize_event(Vec3::new(x0, x1, x2), Vec3::new(w0, w1, w2)))
    }

    /// One sphere step of radius `r_sphere` around `center`, entered along
    /// `w_in`. Absorption is decided right after `N`; an absorbed step stops
    /// there unless `want_event`, in which case the exit and event are still
    /// drawn so the event can be used for light sampling.
    #[allow(clippy::too_many_arguments)]
    pub fn sphere_step<R: Rng + ?Sized>(
        &self,
        sigma_t: f64,
        g: f64,
        phi: f64,
        w_in: UnitVec3<f64>,
        center: Vec3<f64>,
        r_sphere: f64,
        want_event: bool,
        rng: &mut R,
    ) -> Result<SphereStepOutcome> {
        let s = rescale_sigma(sigma_t, r_sphere);
        let n = self.sample_num_events(s, g, rng)?;
        let mut evals = u32::from(s > VACUUM_SIGMA_T);
        let absorbed = test_absorption(n, phi, uniform(rng));
        let mut out = SphereStepOutcome {
            absorbed,
            n_events: n,
            exit_position: center,
            exit_direction: w_in,
            event: None,
            decoder_evals: evals,
        };
        if absorbed && !want_event {
            return Ok(out);
        }
        let psi = std::f64::consts::TAU * uniform::<f64, _>(rng);
        let rot = CanonicalRotation::new(w_in, psi);
        let exit = self.sample_exit(s, g, n, rng)?;
        evals += 1;
        let (p, d) = exit_to_world(exit, w_in, &rot, center, r_sphere);
        if !absorbed {
            out.exit_position = p;
            out.exit_direction = d;
        }
        if want_event {
            let (x, w) = self.sample_event(s, g, phi, exit, n, rng)?;
            evals += 1;
            let lambda = event_weight_sum(phi, n);
            out.event = Some(StepEvent {
                position: center + rot.apply(x) * r_sphere,
                direction: UnitVec3::new_normalize(rot.apply(w.get())),
                lambda,
            });
        }
        out.decoder_evals = evals;
        Ok(out)
    }

    /// Freshly initialized models with production architectures; only
    /// useful for exercising plumbing.
    pub fn untrained(seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, crate::rng::Domain::Init, 0);
        let mut mk = |k: ModelKind| {
            CvaeModel::new(k, k.default_arch(), crate::cvae::Normalization::default(), T::lit(-2.0), &mut rng)
                .expect("production architectures are valid")
                .without_encoder()
        };
        let (l, p, e) = (mk(ModelKind::LengthGen), mk(ModelKind::PathGen), mk(ModelKind::EventGen));
        Self { length: l, path: p, event: e }
    }

    pub fn cast<U: Real>(&self) -> ScatterModels<U> {
        ScatterModels { length: self.length.cast(), path: self.path.cast(), event: self.event.cast() }
    }
}

/// `sum_{k=1}^N phi^k`.
pub fn event_weight_sum(phi: f64, n: u64) -> f64 {
    if phi >= 1.0 {
        n as f64
    } else if phi <= 0.0 {
        0.0
    } else {
        // phi (1 - phi^N) / (1 - phi)
        phi * absorption_prob(n, phi) / (1.0 - phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::{Architecture, Normalization};
    use crate::rng::{stream, Domain};
    use crate::walker::exit_coordinates;
    use proptest::prelude::*;

    fn untrained() -> ScatterModels<f32> {
        ScatterModels::untrained(1)
    }

    #[test]
    fn rejects_wrong_kinds() {
        let m = untrained();
        assert!(ScatterModels::new(m.path.clone(), m.path.clone(), m.event.clone()).is_err());
        let mut rng = stream(1, Domain::Init, 3);
        let odd = CvaeModel::new(ModelKind::PathGen, Architecture { depth: 1, width: 4, latent: 9 }, Normalization::default(), 0.0f32, &mut rng).unwrap();
        assert!(ScatterModels::new(m.length.clone(), odd, m.event.clone()).is_ok());
    }

    #[test]
    fn absorption_examples() {
        assert!(!test_absorption(5, 1.0, 0.0));
        assert!(test_absorption(1, 0.5, 0.49));
        assert!(!test_absorption(1, 0.5, 0.51));
        let mut rng = stream(2, Domain::Audit, 0);
        let trials = 200_000;
        let p = 1.0 - 0.95f64.powi(10);
        let hits = (0..trials).filter(|_| test_absorption(10, 0.95, uniform(&mut rng))).count();
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits as f64 / trials as f64 - p).abs() < 3.0 * sd);
        assert!((p - 0.4013).abs() < 1e-4);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_sigma(7.5, 1.0), 7.5);
        assert_eq!(rescale_sigma(4.0, 0.25), 1.0);
    }

    #[test]
    fn weight_sum_matches_direct_sum() {
        for (phi, n) in [(0.3f64, 1u64), (0.9, 17), (0.999, 300), (1.0, 12), (0.0, 4)] {
            let direct: f64 = (1..=n).map(|k| phi.powi(k as i32)).sum();
            assert!((event_weight_sum(phi, n) - direct).abs() < 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn to_world_examples() {
        let w_in = UnitVec3::new_normalize(Vec3::new(0.3, -0.5, 0.8));
        let c = Vec3::new(1.0, 2.0, 3.0);
        for psi in [0.0, 1.0, 4.0] {
            let (p, _) = to_world(ExitCoords { cos_theta: 1.0, alpha: 0.2, beta: 0.1 }, w_in, c, 2.0, psi);
            assert!((p - (c + w_in.get() * 2.0)).length() < 1e-12);
            let e = ExitCoords { cos_theta: 0.1, alpha: 0.0, beta: 0.0 };
            let (p, d) = to_world(e, w_in, c, 2.0, psi);
            assert!((d.get() - (p - c) * 0.5).length() < 1e-12);
        }
        // out-of-range inputs are projected
        let (p, d) = to_world(ExitCoords { cos_theta: 1.7, alpha: 3.0, beta: 4.0 }, w_in, c, 1.0, 0.0);
        assert!(((p - c).length() - 1.0).abs() < 1e-12);
        assert!((d.length() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn to_world_round_trips(
            cos in -0.999f64..0.999, a in -0.7f64..0.7, b in -0.7f64..0.7, psi in 0.0f64..6.28,
            wx in -1.0f64..1.0, wy in -1.0f64..1.0, wz in -1.0f64..1.0, r in 0.01f64..50.0,
        ) {
            let w_in = UnitVec3::try_new(Vec3::new(wx, wy, wz));
            prop_assume!(w_in.is_some());
            let w_in = w_in.unwrap();
            let center = Vec3::new(wx * 3.0, -1.0, 2.0);
            let coords = ExitCoords { cos_theta: cos, alpha: a, beta: b };
            let (p, d) = to_world(coords, w_in, center, r, psi);
            prop_assert!((((p - center).length() - r) / r).abs() < 1e-9);
            let back = exit_coordinates(w_in, UnitVec3::new_normalize(p - center), d);
            prop_assert!((back.cos_theta - cos).abs() < 1e-6);
            prop_assert!((back.alpha - a).abs() < 1e-6);
            prop_assert!((back.beta - b).abs() < 1e-6);
            // outward
            prop_assert!(d.dot(UnitVec3::new_normalize(p - center)) >= 0.0);
        }

        #[test]
        fn canonical_rotation_is_proper(
            wx in -1.0f64..1.0, wy in -1.0f64..1.0, wz in -1.0f64..1.0, psi in 0.0f64..6.28,
        ) {
            let w_in = UnitVec3::try_new(Vec3::new(wx, wy, wz));
            prop_assume!(w_in.is_some());
            let rot = CanonicalRotation::new(w_in.unwrap(), psi);
            let (ex, ey, ez) = (rot.apply(Vec3::unit_x()), rot.apply(Vec3::unit_y()), rot.apply(Vec3::unit_z()));
            prop_assert!((ez - w_in.unwrap().get()).length() < 1e-12);
            prop_assert!((ex.cross(ey) - ez).length() < 1e-12);
        }
    }

    #[test]
    fn step_contracts_hold_for_any_weights() {
        let m = untrained();
        let mut rng = stream(3, Domain::Audit, 0);
        let w_in = UnitVec3::new_normalize(Vec3::new(1.0, 1.0, 0.0));
        let center = Vec3::new(0.5, 0.0, -2.0);
        let mut absorbed = 0;
        for i in 0..2000 {
            let phi = if i % 2 == 0 { 0.3 } else { 1.0 };
            let want = i % 3 == 0;
            let o = m.sphere_step(40.0, 0.3, phi, w_in, center, 0.7, want, &mut rng).unwrap();
            assert!(o.n_events >= 1);
            if o.absorbed {
                absorbed += 1;
                assert_eq!(o.decoder_evals, if want { 3 } else { 1 });
            } else {
                assert_eq!(o.decoder_evals, if want { 3 } else { 2 });
                assert!(((o.exit_position - center).length() - 0.7).abs() < 1e-4 * 0.7);
                assert!((o.exit_direction.length() - 1.0).abs() < 1e-12);
            }
            assert_eq!(o.event.is_some(), want);
            if let Some(e) = o.event {
                assert!((e.position - center).length() < 0.7);
                assert!((e.direction.length() - 1.0).abs() < 1e-12);
                assert!(e.lambda > 0.0);
            }
        }
        assert!(absorbed > 0);
        let o = m.sphere_step(0.0, 0.3, 0.5, w_in, center, 1.0, false, &mut rng).unwrap();
        assert_eq!(o.n_events, 1);
    }

    #[test]
    fn step_is_replayable() {
        let m = untrained();
        let w_in = UnitVec3::z();
        let run = || {
            let mut rng = stream(9, Domain::Render, 42);
            m.sphere_step(20.0, -0.2, 0.9, w_in, Vec3::zero(), 1.0, true, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sanitizers_enforce_ranges() {
        let c = sanitize_exit(ExitCoords { cos_theta: -3.0, alpha: 0.6, beta: 0.8 });
        assert_eq!(c.cos_theta, -1.0);
        assert!((c.alpha * c.alpha + c.beta * c.beta - 1.0).abs() < 1e-12);
        let (x, w) = sanitize_event(Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0));
        assert!((x.length() - MAX_EVENT_RADIUS).abs() < 1e-12);
        assert_eq!(w, UnitVec3::z());
    }
}
