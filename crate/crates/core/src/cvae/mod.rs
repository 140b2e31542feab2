//! Conditional variational auto-encoders for the three sphere-walk
//! distributions: event count, exit configuration and representative event.

mod elbo;
mod io;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dataset::TrainingSample;
use crate::error::{Error, Result};
use crate::nn::{clamp_log_var, MlpWeights};
use crate::num::Real;
use crate::rng::normal;

pub use elbo::{elbo_loss, elbo_loss_and_grad, weighted_elbo_grad, ElboWorkspace};
pub use io::{ModelExport, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train_model, train_on, EpochLog, TrainConfig, TrainOutcome, TrainingData};

/// Small fixed-capacity vector for conditions and targets.
pub type Small<T> = SmallVec<[T; 8]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Number of scattering events given `(sigma_t, g)`.
    LengthGen,
    /// Exit `(cos theta, alpha, beta)` given `(sigma_t, g, N)`.
    PathGen,
    /// Representative event `(X, W)` given the material, exit and `N`.
    EventGen,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LengthGen, ModelKind::PathGen, ModelKind::EventGen];

    /// Dimension of the condition vector.
    pub fn p_in(self) -> usize {
        match self {
            ModelKind::LengthGen => 2,
            ModelKind::PathGen => 3,
            ModelKind::EventGen => 7,
        }
    }

    /// Dimension of the modelled variable.
    pub fn p_out(self) -> usize {
        match self {
            ModelKind::LengthGen => 1,
            ModelKind::PathGen => 3,
            ModelKind::EventGen => 6,
        }
    }

    /// Production architecture.
    pub fn default_arch(self) -> Architecture {
        match self {
            ModelKind::LengthGen => Architecture { depth: 2, width: 8, latent: 2 },
            ModelKind::PathGen => Architecture { depth: 2, width: 16, latent: 5 },
            ModelKind::EventGen => Architecture { depth: 2, width: 16, latent: 5 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LengthGen => "lengthgen",
            ModelKind::PathGen => "pathgen",
            ModelKind::EventGen => "eventgen",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.ssnn", self.name())
    }

    pub fn condition_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::LengthGen => &["sigma_t_norm", "g"],
            ModelKind::PathGen => &["sigma_t_norm", "g", "n_norm"],
            ModelKind::EventGen => {
                &["sigma_t_norm", "g", "phi", "cos_theta", "alpha", "beta", "n_norm"]
            }
        }
    }

    pub fn target_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::LengthGen => &["n_norm"],
            ModelKind::PathGen => &["cos_theta", "alpha", "beta"],
            ModelKind::EventGen => &["x0", "x1", "x2", "w0", "w1", "w2"],
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            ModelKind::LengthGen => 0,
            ModelKind::PathGen => 1,
            ModelKind::EventGen => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            0 => ModelKind::LengthGen,
            1 => ModelKind::PathGen,
            2 => ModelKind::EventGen,
            t => return Err(Error::Format(format!("unknown model kind tag {t}"))),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lengthgen" => Ok(ModelKind::LengthGen),
            "pathgen" => Ok(ModelKind::PathGen),
            "eventgen" => Ok(ModelKind::EventGen),
            _ => Err(Error::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

/// Depth `D` (hidden layers), width `W` and latent dimension `L`, shared by
/// encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
    pub latent: usize,
}

/// Maps raw physical quantities into network space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Extinction mapped to 1.
    pub sigma_max: f32,
    /// Event count mapped to 1.
    pub n_ref: f32,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { sigma_max: 200.0, n_ref: 1e4 }
    }
}

impl Normalization {
    pub fn sigma(&self, sigma_t: f64) -> f64 {
        sigma_t.ln_1p() / (self.sigma_max as f64).ln_1p()
    }

    pub fn n_events(&self, n: f64) -> f64 {
        n.ln() / (self.n_ref as f64).ln()
    }

    /// Inverse of [`Normalization::n_events`], rounded and clamped to >= 1.
    pub fn n_events_inv(&self, t: f64) -> u64 {
        let n = (t * (self.n_ref as f64).ln()).exp().round();
        if n.is_finite() && n >= 1.0 {
            n.min(u64::MAX as f64) as u64
        } else {
            1
        }
    }

    pub fn length_condition(&self, sigma_t: f64, g: f64) -> [f64; 2] {
        [self.sigma(sigma_t), g]
    }

    pub fn path_condition(&self, sigma_t: f64, g: f64, n: u64) -> [f64; 3] {
        [self.sigma(sigma_t), g, self.n_events(n as f64)]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn event_condition(
        &self,
        sigma_t: f64,
        g: f64,
        phi: f64,
        cos_theta: f64,
        alpha: f64,
        beta: f64,
        n: u64,
    ) -> [f64; 7] {
        [self.sigma(sigma_t), g, phi, cos_theta, alpha, beta, self.n_events(n as f64)]
    }

    pub fn condition(&self, kind: ModelKind, s: &TrainingSample) -> Small<f64> {
        let (sig, g, n) = (s.sigma_t as f64, s.g as f64, s.n_events as u64);
        match kind {
            ModelKind::LengthGen => Small::from_slice(&self.length_condition(sig, g)),
            ModelKind::PathGen => Small::from_slice(&self.path_condition(sig, g, n)),
            ModelKind::EventGen => Small::from_slice(&self.event_condition(
                sig,
                g,
                s.phi as f64,
                s.cos_theta as f64,
                s.alpha as f64,
                s.beta as f64,
                n,
            )),
        }
    }

    pub fn target(&self, kind: ModelKind, s: &TrainingSample) -> Small<f64> {
        match kind {
            ModelKind::LengthGen => Small::from_slice(&[self.n_events(s.n_events as f64)]),
            ModelKind::PathGen => {
                Small::from_slice(&[s.cos_theta as f64, s.alpha as f64, s.beta as f64])
            }
            ModelKind::EventGen => s
                .rep_position
                .iter()
                .chain(&s.rep_direction)
                .map(|&v| v as f64)
                .collect(),
        }
    }
}

/// Encoder `[x, c] -> (mu_z, log_var_z)` and decoder `[z, c] -> (mu_x,
/// log_var_x)`. Inference only needs the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel<T> {
    pub kind: ModelKind,
    pub arch: Architecture,
    pub norm: Normalization,
    pub encoder: Option<MlpWeights<T>>,
    pub decoder: MlpWeights<T>,
    /// SHA-256 of the training corpus, zero when unknown.
    pub dataset_fingerprint: [u8; 32],
}

impl<T: Real> CvaeModel<T> {
    pub fn validate_arch(kind: ModelKind, arch: Architecture) -> Result<()> {
        if arch.width == 0 && arch.depth > 0 || arch.latent == 0 {
            return Err(Error::Config(format!("degenerate architecture {arch:?}")));
        }
        if (kind.p_in() + arch.latent) % 4 != 0 {
            return Err(Error::Config(format!(
                "{kind}: decoder input P_in + L = {} + {} must be a multiple of four",
                kind.p_in(),
                arch.latent
            )));
        }
        Ok(())
    }

    pub fn new<R: Rng + ?Sized>(
        kind: ModelKind,
        arch: Architecture,
        norm: Normalization,
        log_var_bias: T,
        rng: &mut R,
    ) -> Result<Self> {
        Self::validate_arch(kind, arch)?;
        let (p_in, p_out, l) = (kind.p_in(), kind.p_out(), arch.latent);
        let encoder = MlpWeights::init(
            &MlpWeights::<T>::shape(p_out + p_in, arch.depth, arch.width, l),
            log_var_bias,
            rng,
        )?;
        let decoder = MlpWeights::init(
            &MlpWeights::<T>::shape(l + p_in, arch.depth, arch.width, p_out),
            log_var_bias,
            rng,
        )?;
        Ok(Self {
            kind,
            arch,
            norm,
            encoder: Some(encoder),
            decoder,
            dataset_fingerprint: [0; 32],
        })
    }

    /// Checks that the networks match the declared kind and architecture.
    pub fn validate(&self) -> Result<()> {
        Self::validate_arch(self.kind, self.arch)?;
        let (p_in, p_out, l) = (self.kind.p_in(), self.kind.p_out(), self.arch.latent);
        let dec = MlpWeights::<T>::shape(l + p_in, self.arch.depth, self.arch.width, p_out);
        if self.decoder.dims() != dec.as_slice() {
            return Err(Error::Format(format!(
                "{}: decoder dims {:?} do not match {dec:?}",
                self.kind,
                self.decoder.dims()
            )));
        }
        if let Some(enc) = &self.encoder {
            let want = MlpWeights::<T>::shape(p_out + p_in, self.arch.depth, self.arch.width, l);
            if enc.dims() != want.as_slice() {
                return Err(Error::Format(format!(
                    "{}: encoder dims {:?} do not match {want:?}",
                    self.kind,
                    enc.dims()
                )));
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent
    }

    pub fn without_encoder(mut self) -> Self {
        self.encoder = None;
        self
    }

    pub fn cast<U: Real>(&self) -> CvaeModel<U> {
        CvaeModel {
            kind: self.kind,
            arch: self.arch,
            norm: self.norm,
            encoder: self.encoder.as_ref().map(MlpWeights::cast),
            decoder: self.decoder.cast(),
            dataset_fingerprint: self.dataset_fingerprint,
        }
    }

    /// Decodes latent `z` under condition `c` and draws the output with
    /// posterior noise `eps`: `out = mu + exp(log_var / 2) * eps`.
    pub fn decode(&self, c: &[T], z: &[T], eps: &[T], out: &mut [T]) -> Result<()> {
        let p_out = self.kind.p_out();
        if c.len() != self.kind.p_in() {
            return Err(Error::Shape { what: "condition", expected: self.kind.p_in(), got: c.len() });
        }
        if z.len() != self.arch.latent {
            return Err(Error::Shape { what: "latent", expected: self.arch.latent, got: z.len() });
        }
        if eps.len() != p_out || out.len() != p_out {
            return Err(Error::Shape { what: "decoder sample", expected: p_out, got: eps.len().min(out.len()) });
        }
        let input: SmallVec<[T; 16]> = z.iter().chain(c).copied().collect();
        let mut raw: SmallVec<[T; 16]> = SmallVec::from_elem(T::zero(), 2 * p_out);
        self.decoder.eval_into(&input, &mut raw)?;
        let half = T::lit(0.5);
        for i in 0..p_out {
            out[i] = raw[i] + (half * clamp_log_var(raw[p_out + i])).exp() * eps[i];
        }
        Ok(())
    }

    /// Draws `z ~ N(0, I)` and `eps ~ N(0, I)` and decodes.
    pub fn sample<R: Rng + ?Sized>(&self, c: &[T], rng: &mut R, out: &mut [T]) -> Result<()> {
        let z: SmallVec<[T; 16]> = (0..self.arch.latent).map(|_| normal(rng)).collect();
        let eps: SmallVec<[T; 16]> = (0..self.kind.p_out()).map(|_| normal(rng)).collect();
        self.decode(c, &z, &eps, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn production_architectures_are_aligned() {
        for kind in ModelKind::ALL {
            let arch = kind.default_arch();
            assert_eq!((kind.p_in() + arch.latent) % 4, 0);
            assert_eq!(kind.condition_names().len(), kind.p_in());
            assert_eq!(kind.target_names().len(), kind.p_out());
            let mut rng = stream(0, Domain::Init, 0);
            let m = CvaeModel::<f32>::new(kind, arch, Normalization::default(), -2.0, &mut rng).unwrap();
            m.validate().unwrap();
            assert_eq!(m.decoder.input_dim(), arch.latent + kind.p_in());
            assert_eq!(m.decoder.output_dim(), 2 * kind.p_out());
            assert_eq!(m.encoder.as_ref().unwrap().depth(), m.decoder.depth());
            assert_eq!(m.encoder.as_ref().unwrap().width(), arch.width);
        }
        let bad = Architecture { depth: 2, width: 8, latent: 3 };
        assert!(CvaeModel::<f32>::validate_arch(ModelKind::LengthGen, bad).is_err());
        let alt = Architecture { depth: 3, width: 12, latent: 6 };
        assert!(CvaeModel::<f32>::validate_arch(ModelKind::PathGen, alt).is_err());
        assert!(CvaeModel::<f32>::validate_arch(ModelKind::LengthGen, alt).is_ok());
    }

    #[test]
    fn normalization_round_trips_counts() {
        let n = Normalization::default();
        assert_eq!(n.sigma(0.0), 0.0);
        assert!((n.sigma(200.0) - 1.0).abs() < 1e-12);
        for k in [1u64, 2, 17, 999, 10_000, 54_321] {
            assert_eq!(n.n_events_inv(n.n_events(k as f64)), k);
        }
        assert_eq!(n.n_events_inv(-3.0), 1);
        assert_eq!(n.n_events_inv(f64::NAN), 1);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("PathGen".parse::<ModelKind>().unwrap(), ModelKind::PathGen);
        assert!("foo".parse::<ModelKind>().is_err());
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::from_tag(k.tag()).unwrap(), k);
        }
    }

    #[test]
    fn decode_is_deterministic_given_noise() {
        let mut rng = stream(0, Domain::Init, 1);
        let m = CvaeModel::<f32>::new(ModelKind::PathGen, ModelKind::PathGen.default_arch(), Normalization::default(), -2.0, &mut rng).unwrap();
        let c = [0.5, 0.1, 0.3];
        let z = [0.1, -0.2, 0.3, 0.0, 1.0];
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        m.decode(&c, &z, &[0.0; 3], &mut a).unwrap();
        m.decode(&c, &z, &[0.0; 3], &mut b).unwrap();
        assert_eq!(a, b);
        let (mu, _) = m.decoder.forward(&[0.1, -0.2, 0.3, 0.0, 1.0, 0.5, 0.1, 0.3]).unwrap();
        assert_eq!(a.to_vec(), mu);
        assert!(m.decode(&c[..2], &z, &[0.0; 3], &mut a).is_err());
    }
}
