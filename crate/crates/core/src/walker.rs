//! Ground-truth random walks from the center of a sphere.
//!
//! A walk starts with a forced scattering event at the center, arriving along
//! +z. It then alternates phase-function sampling and exponential free flights
//! until a flight segment crosses the sphere. Absorption is never applied
//! here: it only depends on the event count and is handled analytically.

use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::optics::{free_path, HenyeyGreenstein};
use crate::rng::uniform;
use crate::vec3::{Frame, UnitVec3, Vec3};

/// Walks are aborted beyond this many events.
pub const MAX_WALK_EVENTS: usize = 1_000_000;

/// Extinction at or below this value is treated as vacuum, so the forced
/// center event is always the only one.
pub const VACUUM_SIGMA_T: f64 = 1e-6;

/// Threshold on |cos theta| beyond which the exit frame is degenerate.
const DEGENERATE_COS: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterEvent<T> {
    pub position: Vec3<T>,
    /// Propagation direction of the photon arriving at `position`.
    pub incoming: UnitVec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkRecord<T> {
    pub events: Vec<ScatterEvent<T>>,
    /// First crossing of the sphere, projected exactly onto it.
    pub exit_position: Vec3<T>,
    pub exit_direction: UnitVec3<T>,
}

impl<T: Real> WalkRecord<T> {
    pub fn n_events(&self) -> usize {
        self.events.len()
    }
}

/// Summary of a walk without its event list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkExit<T> {
    pub n_events: usize,
    pub exit_position: Vec3<T>,
    pub exit_direction: UnitVec3<T>,
}

/// Runs one walk in a sphere of `radius` centered at the origin and calls
/// `visit` for every scattering event, in order.
pub fn walk_sphere_with<T, R, F>(
    sigma_t: T,
    g: T,
    radius: T,
    rng: &mut R,
    mut visit: F,
) -> Result<WalkExit<T>>
where
    T: Real,
    R: Rng + ?Sized,
    F: FnMut(&ScatterEvent<T>),
{
    if !(sigma_t >= T::zero()) {
        return Err(Error::domain(format!("sigma_t must be >= 0, got {sigma_t}")));
    }
    if !(radius > T::zero()) {
        return Err(Error::domain(format!("radius must be > 0, got {radius}")));
    }
    let phase = HenyeyGreenstein::new(g)?;
    let vacuum = sigma_t <= T::lit(VACUUM_SIGMA_T);
    let r2 = radius * radius;

    let mut pos = Vec3::zero();
    let mut dir = UnitVec3::z();
    visit(&ScatterEvent { position: pos, incoming: dir });
    let mut n = 1usize;
    loop {
        let u1 = uniform(rng);
        let u2 = uniform(rng);
        let new_dir = phase.sample(dir, u1, u2);
        // Distance to the sphere along new_dir from inside.
        let b = pos.dot(*new_dir);
        let c = pos.length_squared() - r2;
        let t_exit = -b + (b * b - c).max(T::zero()).sqrt();
        let flight = if vacuum {
            T::infinity()
        } else {
            free_path(sigma_t, uniform(rng))
        };
        let next = pos + *new_dir * flight;
        if flight >= t_exit || next.length_squared() >= r2 {
            let hit = pos + *new_dir * t_exit;
            let exit_position = hit * (radius / hit.length());
            return Ok(WalkExit {
                n_events: n,
                exit_position,
                exit_direction: new_dir,
            });
        }
        pos = next;
        dir = new_dir;
        n += 1;
        if n > MAX_WALK_EVENTS {
            log::warn!("walk at sigma_t={sigma_t}, g={g} exceeded {MAX_WALK_EVENTS} events");
            return Err(Error::EventCap(n));
        }
        visit(&ScatterEvent { position: pos, incoming: dir });
    }
}

/// Full walk in a sphere of the given radius, keeping every event.
pub fn walk_sphere<T: Real, R: Rng + ?Sized>(
    sigma_t: T,
    g: T,
    radius: T,
    rng: &mut R,
) -> Result<WalkRecord<T>> {
    let mut events = Vec::new();
    let exit = walk_sphere_with(sigma_t, g, radius, rng, |e| events.push(*e))?;
    Ok(WalkRecord {
        events,
        exit_position: exit.exit_position,
        exit_direction: exit.exit_direction,
    })
}

pub fn walk_unit_sphere<T: Real, R: Rng + ?Sized>(
    sigma_t: T,
    g: T,
    rng: &mut R,
) -> Result<WalkRecord<T>> {
    walk_sphere(sigma_t, g, T::one(), rng)
}

/// Rotation-invariant coordinates of an exit configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitCoords<T> {
    /// Cosine between the entry direction and the exit position.
    pub cos_theta: T,
    /// Projection of the exit direction on the binormal.
    pub alpha: T,
    /// Projection of the exit direction on the tangent.
    pub beta: T,
}

/// Local frame at a point `x_hat` of the unit sphere: `(normal, binormal,
/// tangent)` with binormal `w_in x x_hat`. Falls back to a fixed completion of
/// the normal when `x_hat` is (anti)parallel to `w_in`.
pub fn exit_frame<T: Real>(w_in: UnitVec3<T>, x_hat: UnitVec3<T>) -> (Vec3<T>, Vec3<T>, Vec3<T>) {
    let n = x_hat.get();
    let cos = w_in.dot(x_hat);
    if cos.abs() > T::lit(DEGENERATE_COS) {
        let f = Frame::from_normal(x_hat);
        return (n, f.s, f.t);
    }
    let b = w_in.get().cross(n).normalize();
    let t = b.cross(n);
    (n, b, t)
}

/// `(cos theta, alpha, beta)` of an exit at unit direction `x_hat` from the
/// center, leaving along `w_out`, for a walk entering along `w_in`.
pub fn exit_coordinates<T: Real>(
    w_in: UnitVec3<T>,
    x_hat: UnitVec3<T>,
    w_out: UnitVec3<T>,
) -> ExitCoords<T> {
    let (_, b, t) = exit_frame(w_in, x_hat);
    let one = T::one();
    ExitCoords {
        cos_theta: w_in.dot(x_hat).max(-one).min(one),
        alpha: w_out.get().dot(b),
        beta: w_out.get().dot(t),
    }
}

pub fn parameterize_exit<T: Real>(record: &WalkRecord<T>) -> ExitCoords<T> {
    let w_in = record.events[0].incoming;
    let x_hat = UnitVec3::new_normalize(record.exit_position);
    exit_coordinates(w_in, x_hat, record.exit_direction)
}

/// One event drawn with probability proportional to `phi^k`, `k = 1..N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Representative<T> {
    /// Zero-based index into the event list (event `k = index + 1`).
    pub index: usize,
    pub position: Vec3<T>,
    pub direction: UnitVec3<T>,
    /// Normalizer `sum_{k=1}^N phi^k`; zero when every weight vanishes.
    pub lambda: T,
}

pub fn sample_representative<T: Real, R: Rng + ?Sized>(
    events: &[ScatterEvent<T>],
    phi: T,
    rng: &mut R,
) -> Result<Representative<T>> {
    if events.is_empty() {
        return Err(Error::domain("representative of an empty event list"));
    }
    if !(phi >= T::zero() && phi <= T::one()) {
        return Err(Error::domain(format!("albedo must lie in [0, 1], got {phi}")));
    }
    let mut weights = Vec::with_capacity(events.len());
    let mut w = T::one();
    for _ in events {
        w *= phi;
        weights.push(w);
    }
    let lambda: T = weights.iter().copied().sum();
    if lambda <= T::zero() {
        return Ok(Representative {
            index: 0,
            position: events[0].position,
            direction: events[0].incoming,
            lambda: T::zero(),
        });
    }
    let target = uniform::<T, _>(rng) * lambda;
    let mut acc = T::zero();
    let mut index = events.len() - 1;
    for (i, &wk) in weights.iter().enumerate() {
        acc += wk;
        if target < acc {
            index = i;
            break;
        }
    }
    Ok(Representative {
        index,
        position: events[index].position,
        direction: events[index].incoming,
        lambda,
    })
}

/// Streaming weighted reservoir of size one: equivalent in distribution to
/// [`sample_representative`] but without storing the event list.
#[derive(Debug, Clone)]
pub struct RepresentativeReservoir<T> {
    phi: T,
    weight: T,
    total: T,
    seen: usize,
    chosen: Option<(usize, ScatterEvent<T>)>,
}

impl<T: Real> RepresentativeReservoir<T> {
    pub fn new(phi: T) -> Self {
        Self {
            phi,
            weight: T::one(),
            total: T::zero(),
            seen: 0,
            chosen: None,
        }
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, event: &ScatterEvent<T>, rng: &mut R) {
        self.weight *= self.phi;
        self.total += self.weight;
        let take = match self.chosen {
            None => true,
            Some(_) if self.weight > T::zero() => uniform::<T, _>(rng) * self.total < self.weight,
            Some(_) => false,
        };
        if take {
            self.chosen = Some((self.seen, *event));
        }
        self.seen += 1;
    }

    pub fn finish(self) -> Option<Representative<T>> {
        self.chosen.map(|(index, e)| Representative {
            index,
            position: e.position,
            direction: e.incoming,
            lambda: self.total,
        })
    }
}
