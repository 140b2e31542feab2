//! Scattering model of a homogeneous medium: Henyey-Greenstein phase
//! function, Beer-Lambert transmittance, free-path sampling and the
//! Bernoulli absorption probability of a chain of scattering events.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::vec3::{Frame, UnitVec3, Vec3};

/// Below this |g| the phase function is sampled as isotropic.
const ISOTROPIC_G: f64 = 1e-4;

/// Optical description of one spectral channel of a homogeneous medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumParams<T> {
    /// Extinction coefficient, 1/length.
    pub sigma_t: T,
    /// Henyey-Greenstein anisotropy.
    pub g: T,
    /// Single-scattering albedo sigma_s / sigma_t.
    pub phi: T,
}

impl<T: Real> MediumParams<T> {
    pub fn new(sigma_t: T, g: T, phi: T) -> Result<Self> {
        if !(sigma_t >= T::zero()) || !sigma_t.is_finite() {
            return Err(Error::domain(format!("sigma_t must be finite and >= 0, got {sigma_t}")));
        }
        check_g(g)?;
        if !(phi >= T::zero() && phi <= T::one()) {
            return Err(Error::domain(format!("albedo must lie in [0, 1], got {phi}")));
        }
        Ok(Self { sigma_t, g, phi })
    }

    pub fn sigma_s(&self) -> T {
        self.sigma_t * self.phi
    }

    pub fn sigma_a(&self) -> T {
        self.sigma_t - self.sigma_s()
    }

    pub fn phase(&self) -> HenyeyGreenstein<T> {
        HenyeyGreenstein { g: self.g }
    }
}

fn check_g<T: Real>(g: T) -> Result<()> {
    if g.abs() < T::one() {
        Ok(())
    } else {
        Err(Error::domain(format!("HG anisotropy must satisfy |g| < 1, got {g}")))
    }
}

/// Henyey-Greenstein phase function with a validated anisotropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HenyeyGreenstein<T> {
    g: T,
}

impl<T: Real> HenyeyGreenstein<T> {
    pub fn new(g: T) -> Result<Self> {
        check_g(g)?;
        Ok(Self { g })
    }

    pub fn g(&self) -> T {
        self.g
    }

    /// Density per steradian for the cosine between propagation directions.
    #[inline]
    pub fn eval(&self, cos_angle: T) -> T {
        let g = self.g;
        let one = T::one();
        let denom = one + g * g - (g + g) * cos_angle;
        let inv_4pi = one / (T::lit(4.0) * T::PI());
        inv_4pi * (one - g * g) / (denom * denom.sqrt())
    }

    /// Inverse-CDF sample of the scattering cosine. `u = 0` maps to straight
    /// ahead, `u -> 1` to straight back.
    #[inline]
    pub fn sample_cos(&self, u: T) -> T {
        let g = self.g;
        let one = T::one();
        let two = T::lit(2.0);
        let cos = if g.abs() < T::lit(ISOTROPIC_G) {
            one - two * u
        } else {
            let sq = (one - g * g) / (one + g - two * g * u);
            (one + g * g - sq * sq) / (two * g)
        };
        cos.max(-one).min(one)
    }

    /// Scattered direction around `w_in` (the propagation direction before
    /// the event) with azimuth `2 pi u2`.
    #[inline]
    pub fn sample(&self, w_in: UnitVec3<T>, u1: T, u2: T) -> UnitVec3<T> {
        let cos = self.sample_cos(u1);
        let sin = (T::one() - cos * cos).max(T::zero()).sqrt();
        let (sp, cp) = (T::TAU() * u2).sin_cos();
        let frame = Frame::from_normal(w_in);
        let d = frame.to_world(Vec3::new(sin * cp, sin * sp, cos));
        UnitVec3::new_normalize(d)
    }
}

pub fn hg_eval<T: Real>(g: T, cos_angle: T) -> Result<T> {
    Ok(HenyeyGreenstein::new(g)?.eval(cos_angle))
}

pub fn hg_sample<T: Real>(g: T, w_in: UnitVec3<T>, u1: T, u2: T) -> Result<UnitVec3<T>> {
    Ok(HenyeyGreenstein::new(g)?.sample(w_in, u1, u2))
}

/// Beer-Lambert transmittance `exp(-sigma_t d)`.
pub fn transmittance<T: Real>(sigma_t: T, distance: T) -> Result<T> {
    if !(distance >= T::zero()) {
        return Err(Error::domain(format!("distance must be >= 0, got {distance}")));
    }
    Ok((-sigma_t * distance).exp())
}

/// Exponentially distributed distance to the next interaction.
pub fn sample_free_path<T: Real>(sigma_t: T, xi: T) -> Result<T> {
    if !(sigma_t > T::zero()) {
        return Err(Error::domain(format!(
            "free-path sampling needs sigma_t > 0, got {sigma_t}"
        )));
    }
    if !(xi >= T::zero() && xi < T::one()) {
        return Err(Error::domain(format!("xi must lie in [0, 1), got {xi}")));
    }
    Ok(free_path(sigma_t, xi))
}

/// Unchecked [`sample_free_path`] for inner loops.
#[inline]
pub(crate) fn free_path<T: Real>(sigma_t: T, xi: T) -> T {
    -(-xi).ln_1p() / sigma_t
}

/// Probability that a chain of `n_events` scatterings is absorbed somewhere,
/// `1 - phi^n`.
pub fn absorption_prob<T: Real>(n_events: u64, phi: T) -> T {
    if n_events == 0 || phi >= T::one() {
        return T::zero();
    }
    if phi <= T::zero() {
        return T::one();
    }
    let n = T::from_u64(n_events).expect("event count representable");
    -(n * phi.ln()).exp_m1()
}

/// `phi^n` computed through the logarithm, exact at the endpoints.
#[inline]
pub fn survival_prob<T: Real>(n_events: u64, phi: T) -> T {
    T::one() - absorption_prob(n_events, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;
    use std::f64::consts::PI;

    /// Composite Simpson quadrature, independent of the implementation.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn hg_examples() {
        assert!((hg_eval(0.0, 0.37).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((hg_eval(0.0f64, 0.37).unwrap() - 0.0795775).abs() < 1e-7);
        assert!((hg_eval(0.5, 1.0).unwrap() - 6.0 / (4.0 * PI)).abs() < 1e-14);
        assert!((hg_eval(0.5f64, 1.0).unwrap() - 0.477465).abs() < 1e-6);
        assert!(hg_eval(1.0, 0.0).is_err());
        assert!(hg_eval(-1.2f64, 0.0).is_err());
        assert!(hg_sample(1.0, UnitVec3::z(), 0.5, 0.5).is_err());
    }

    #[test]
    fn hg_normalizes() {
        for g in [-0.7, 0.0, 0.9] {
            let hg = HenyeyGreenstein::new(g).unwrap();
            let total = 2.0 * PI * simpson(|c| hg.eval(c), -1.0, 1.0, 20_000);
            assert!((total - 1.0).abs() < 1e-6, "g={g}: {total}");
        }
    }

    #[test]
    fn hg_sample_limits() {
        let iso = HenyeyGreenstein::new(0.0f64).unwrap();
        let d = iso.sample(UnitVec3::z(), 0.5, 0.123);
        assert!(d.z.abs() < 1e-12);
        // Analytic limit of the inversion formula as u -> 1 is cos = -1.
        let hg = HenyeyGreenstein::new(0.9f64).unwrap();
        assert!((hg.sample_cos(1.0 - 1e-12) + 1.0).abs() < 1e-6);
        assert!((hg.sample_cos(0.0) - 1.0).abs() < 1e-12);
        // near-isotropic branch switch is continuous
        let a = HenyeyGreenstein::new(0.99e-4f64).unwrap().sample_cos(0.3);
        let b = HenyeyGreenstein::new(1.01e-4f64).unwrap().sample_cos(0.3);
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn hg_sample_is_unit_and_rotation_consistent() {
        let mut rng = stream(1, Domain::Audit, 0);
        let hg = HenyeyGreenstein::new(0.6).unwrap();
        for _ in 0..1000 {
            let w = UnitVec3::new_normalize(Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            ));
            let u1: f64 = rng.random();
            let d = hg.sample(w, u1, rng.random());
            assert!((d.length() - 1.0).abs() < 1e-12);
            assert!((d.dot(w) - hg.sample_cos(u1)).abs() < 1e-9);
        }
    }

    #[test]
    fn transmittance_examples() {
        assert_eq!(transmittance(3.0, 0.0).unwrap(), 1.0);
        assert!((transmittance(2.0, 0.5).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((transmittance(2.0f64, 0.5).unwrap() - 0.367879).abs() < 1e-6);
        assert_eq!(transmittance(0.0, 12.0).unwrap(), 1.0);
        assert!(transmittance(1.0, -0.1).is_err());
    }

    #[test]
    fn free_path_examples() {
        assert_eq!(sample_free_path(5.0, 0.0).unwrap(), 0.0);
        let xi = 1.0 - (-2.0f64).exp();
        assert!((sample_free_path(2.0, xi).unwrap() - 1.0).abs() < 1e-12);
        assert!(sample_free_path(0.0, 0.5).is_err());
        assert!(sample_free_path(-1.0, 0.5).is_err());
        assert!(sample_free_path(1.0, 1.0).is_err());
    }

    #[test]
    fn absorption_examples() {
        assert_eq!(absorption_prob(17, 1.0), 0.0);
        assert!((absorption_prob(1, 0.975f64) - 0.025).abs() < 1e-12);
        assert!((absorption_prob(100, 0.99) - (1.0 - 0.99f64.powi(100))).abs() < 1e-12);
        assert!((absorption_prob(100, 0.99f64) - 0.63397).abs() < 1e-5);
        assert_eq!(absorption_prob(0, 0.3), 0.0);
        assert_eq!(absorption_prob(3, 0.0), 1.0);
    }

    #[test]
    fn medium_validation() {
        let m = MediumParams::new(4.0, 0.3, 0.75).unwrap();
        assert_eq!(m.sigma_a() + m.sigma_s(), m.sigma_t);
        assert_eq!(m.sigma_s(), 3.0);
        assert!(MediumParams::new(-1.0, 0.0, 0.5).is_err());
        assert!(MediumParams::new(1.0, 1.0, 0.5).is_err());
        assert!(MediumParams::new(1.0, 0.0, 1.5).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transmittance_is_multiplicative(s in 0.0f64..50.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
                let lhs = transmittance(s, a).unwrap() * transmittance(s, b).unwrap();
                prop_assert!((lhs - transmittance(s, a + b).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn absorption_is_monotone(n in 0u64..10_000, phi in 0.0f64..1.0, dphi in 0.0f64..0.1) {
                prop_assert!(absorption_prob(n + 1, phi) >= absorption_prob(n, phi));
                let phi2 = (phi + dphi).min(1.0);
                prop_assert!(absorption_prob(n, phi2) <= absorption_prob(n, phi) + 1e-15);
            }

            #[test]
            fn hg_is_positive(g in -0.99f64..0.99, c in -1.0f64..1.0) {
                prop_assert!(hg_eval(g, c).unwrap() > 0.0);
            }
        }
    }
}
