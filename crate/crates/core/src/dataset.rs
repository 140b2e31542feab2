//! Training corpus of summarized sphere walks and its binary file format.
//!
//! File layout (little endian):
//!
//! | field | type |
//! |---|---|
//! | magic `SSWK` | 4 bytes |
//! | version | u32 |
//! | count | u64 |
//! | seed | u64 |
//! | sigma_t range, g range | 4 x f32 |
//! | albedo law tag, two parameters | u32, 2 x f32 |
//! | sigma_t law tag | u32 |
//! | records | `count` x 52 bytes |
//!
//! A record is `sigma_t, g, phi` (f32), `n_events` (u32), then
//! `cos_theta, alpha, beta, X[3], W[3]` (f32).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, uniform, Domain};
use crate::walker::{exit_coordinates, walk_sphere_with, RepresentativeReservoir};
use crate::vec3::{UnitVec3, Vec3};

pub const DATASET_MAGIC: &[u8; 4] = b"SSWK";
pub const DATASET_VERSION: u32 = 1;
const HEADER_BYTES: usize = 56;
const RECORD_BYTES: usize = 52;

/// Largest |g| drawn for training; the HG inversion needs |g| < 1.
pub const MAX_ABS_G: f64 = 0.9999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub sigma_t: f32,
    pub g: f32,
    pub phi: f32,
    pub n_events: u32,
    pub cos_theta: f32,
    pub alpha: f32,
    pub beta: f32,
    pub rep_position: [f32; 3],
    pub rep_direction: [f32; 3],
}

impl TrainingSample {
    pub fn is_valid(&self) -> bool {
        let x2: f32 = self.rep_position.iter().map(|v| v * v).sum();
        let w2: f32 = self.rep_direction.iter().map(|v| v * v).sum();
        self.n_events >= 1
            && (-1.0..=1.0).contains(&self.cos_theta)
            && self.alpha * self.alpha + self.beta * self.beta <= 1.0 + 1e-5
            && x2 < 1.0
            && (w2 - 1.0).abs() < 1e-5
    }
}

/// Distribution of the albedo drawn for each sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum AlbedoLaw {
    /// `phi = 1 - 10^u` with `u` uniform in `[exp_min, exp_max]`.
    LogUniform { exp_min: f32, exp_max: f32 },
    Uniform { min: f32, max: f32 },
    Constant { phi: f32 },
}

impl Default for AlbedoLaw {
    fn default() -> Self {
        AlbedoLaw::LogUniform { exp_min: -5.0, exp_max: -0.5 }
    }
}

impl AlbedoLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            AlbedoLaw::LogUniform { exp_min, exp_max } => {
                let u = exp_min as f64 + (exp_max - exp_min) as f64 * uniform::<f64, _>(rng);
                1.0 - 10f64.powf(u)
            }
            AlbedoLaw::Uniform { min, max } => {
                min as f64 + (max - min) as f64 * uniform::<f64, _>(rng)
            }
            AlbedoLaw::Constant { phi } => phi as f64,
        }
    }

    fn encode(&self) -> (u32, f32, f32) {
        match *self {
            AlbedoLaw::LogUniform { exp_min, exp_max } => (0, exp_min, exp_max),
            AlbedoLaw::Uniform { min, max } => (1, min, max),
            AlbedoLaw::Constant { phi } => (2, phi, phi),
        }
    }

    fn decode(tag: u32, a: f32, b: f32) -> Result<Self> {
        Ok(match tag {
            0 => AlbedoLaw::LogUniform { exp_min: a, exp_max: b },
            1 => AlbedoLaw::Uniform { min: a, max: b },
            2 => AlbedoLaw::Constant { phi: a },
            t => return Err(Error::format(format!("unknown albedo law tag {t}"))),
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AlbedoLaw::LogUniform { exp_min, exp_max } => exp_min <= exp_max && exp_max <= 0.0,
            AlbedoLaw::Uniform { min, max } => 0.0 <= min && min <= max && max <= 1.0,
            AlbedoLaw::Constant { phi } => (0.0..=1.0).contains(&phi),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid albedo law {self:?}")))
        }
    }
}

/// Distribution of the extinction drawn for each sample within its range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaTLaw {
    #[default]
    Uniform,
    /// Uniform in `ln(1 + sigma_t)`, the scale of the network condition.
    Log1p,
}

impl SigmaTLaw {
    fn sample(self, (lo, hi): (f32, f32), u: f64) -> f64 {
        let (lo, hi) = (lo as f64, hi as f64);
        match self {
            SigmaTLaw::Uniform => lo + (hi - lo) * u,
            SigmaTLaw::Log1p => (lo.ln_1p() + (hi.ln_1p() - lo.ln_1p()) * u).exp_m1().clamp(lo, hi),
        }
    }

    fn tag(self) -> u32 {
        self as u32
    }

    fn from_tag(t: u32) -> Result<Self> {
        match t {
            0 => Ok(SigmaTLaw::Uniform),
            1 => Ok(SigmaTLaw::Log1p),
            t => Err(Error::format(format!("unknown sigma_t law tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub sigma_t_range: (f32, f32),
    #[serde(default)]
    pub sigma_t_law: SigmaTLaw,
    pub g_range: (f32, f32),
    pub albedo: AlbedoLaw,
    pub seed: u64,
}

impl DatasetConfig {
    /// Corpus parameters used for the shipped models.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            n_samples: 1_600_000,
            sigma_t_range: (0.0, 200.0),
            sigma_t_law: SigmaTLaw::Uniform,
            g_range: (-1.0, 1.0),
            albedo: AlbedoLaw::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.sigma_t_range;
        let (g0, g1) = self.g_range;
        if self.n_samples == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::Config(format!("invalid sigma_t range {s0}:{s1}")));
        }
        if !(-1.0 <= g0 && g0 <= g1 && g1 <= 1.0) {
            return Err(Error::Config(format!("invalid g range {g0}:{g1}")));
        }
        self.albedo.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<TrainingSample>,
}

/// Simulates one training sample; `index` selects the random streams.
pub fn simulate_sample(config: &DatasetConfig, index: u64) -> Result<TrainingSample> {
    let mut rng = stream(config.seed, Domain::Dataset, 2 * index);
    let mut pick_rng = stream(config.seed, Domain::Dataset, 2 * index + 1);
    let (g0, g1) = config.g_range;
    let sigma_t = config.sigma_t_law.sample(config.sigma_t_range, uniform(&mut rng));
    let g = (g0 as f64 + (g1 - g0) as f64 * uniform::<f64, _>(&mut rng))
        .clamp(-MAX_ABS_G, MAX_ABS_G);
    let phi = config.albedo.sample(&mut rng);

    let mut reservoir = RepresentativeReservoir::new(phi);
    let exit = walk_sphere_with(sigma_t, g, 1.0, &mut rng, |e| {
        reservoir.offer(e, &mut pick_rng)
    })?;
    let rep = reservoir.finish().expect("walks have at least one event");
    let x_hat = UnitVec3::new_normalize(exit.exit_position);
    let c = exit_coordinates(UnitVec3::z(), x_hat, exit.exit_direction);
    // Rotate about the entry axis so the exit lies at azimuth zero, the frame
    // in which inference places the exit point.
    let (sin_psi, cos_psi) = x_hat.y.atan2(x_hat.x).sin_cos();
    let unrotate = |v: Vec3<f64>| {
        Vec3::new(cos_psi * v.x + sin_psi * v.y, -sin_psi * v.x + cos_psi * v.y, v.z)
    };
    let (rep_x, rep_w) = (unrotate(rep.position), unrotate(rep.direction.get()).normalize());
    let f = |v: f64| v as f32;
    Ok(TrainingSample {
        sigma_t: f(sigma_t),
        g: f(g),
        phi: f(phi),
        n_events: exit.n_events as u32,
        cos_theta: f(c.cos_theta),
        alpha: f(c.alpha),
        beta: f(c.beta),
        // f32 rounding must not push the position onto the sphere
        rep_position: rep_x.to_array().map(|v| f(v * (1.0 - 1e-6))),
        rep_direction: rep_w.to_array().map(f),
    })
}

/// Runs `n_samples` independent walks. The result only depends on the
/// configuration, never on the thread count.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let samples = (0..config.n_samples as u64)
        .into_par_iter()
        .map(|i| simulate_sample(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: config.clone(), samples })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub mean_n_events: f64,
    pub n_events_quantiles: [(f64, u32); 5],
    pub max_n_events: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut n: Vec<u32> = self.samples.iter().map(|s| s.n_events).collect();
        n.sort_unstable();
        let q = |p: f64| (p, n[((n.len() - 1) as f64 * p).round() as usize]);
        DatasetSummary {
            count: n.len(),
            mean_n_events: n.iter().map(|&v| v as f64).sum::<f64>() / n.len() as f64,
            n_events_quantiles: [q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)],
            max_n_events: *n.last().unwrap(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.samples.len() * RECORD_BYTES);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        for v in [
            self.config.sigma_t_range.0,
            self.config.sigma_t_range.1,
            self.config.g_range.0,
            self.config.g_range.1,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let (tag, a, b) = self.config.albedo.encode();
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        out.extend_from_slice(&self.config.sigma_t_law.tag().to_le_bytes());
        for s in &self.samples {
            for v in [s.sigma_t, s.g, s.phi] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&s.n_events.to_le_bytes());
            for v in [s.cos_theta, s.alpha, s.beta]
                .into_iter()
                .chain(s.rep_position)
                .chain(s.rep_direction)
            {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; HEADER_BYTES];
        r.read_exact(&mut head)
            .map_err(|e| Error::format(format!("truncated dataset header: {e}")))?;
        if &head[..4] != DATASET_MAGIC {
            return Err(Error::format("not a dataset file (bad magic)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(head[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(head[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != DATASET_VERSION {
            return Err(Error::Version { expected: DATASET_VERSION, found: version });
        }
        let count = u64_at(8) as usize;
        let config = DatasetConfig {
            n_samples: count,
            seed: u64_at(16),
            sigma_t_range: (f32_at(24), f32_at(28)),
            sigma_t_law: SigmaTLaw::from_tag(u32_at(52))?,
            g_range: (f32_at(32), f32_at(36)),
            albedo: AlbedoLaw::decode(u32_at(40), f32_at(44), f32_at(48))?,
        };
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * RECORD_BYTES {
            return Err(Error::format(format!(
                "dataset declares {count} records but holds {} bytes",
                body.len()
            )));
        }
        let samples = body
            .chunks_exact(RECORD_BYTES)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap());
                TrainingSample {
                    sigma_t: f(0),
                    g: f(1),
                    phi: f(2),
                    n_events: u32::from_le_bytes(c[12..16].try_into().unwrap()),
                    cos_theta: f(4),
                    alpha: f(5),
                    beta: f(6),
                    rep_position: [f(7), f(8), f(9)],
                    rep_direction: [f(10), f(11), f(12)],
                }
            })
            .collect();
        Ok(Self { config, samples })
    }

    /// SHA-256 of the serialized corpus.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "sigma_t,g,phi,n_events,cos_theta,alpha,beta,x0,x1,x2,w0,w1,w2"
        )?;
        for s in &self.samples {
            let [x0, x1, x2] = s.rep_position;
            let [w0, w1, w2] = s.rep_direction;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.sigma_t, s.g, s.phi, s.n_events, s.cos_theta, s.alpha, s.beta, x0, x1, x2, w0,
                w1, w2
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_samples: 300,
            sigma_t_range: (0.0, 30.0),
            sigma_t_law: SigmaTLaw::Uniform,
            g_range: (-1.0, 1.0),
            albedo: AlbedoLaw::default(),
            seed,
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let a = generate_dataset(&small(7)).unwrap();
        let b = generate_dataset(&small(7)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.samples.iter().all(TrainingSample::is_valid));
        assert!(a.samples.iter().all(|s| s.phi < 1.0 && s.phi >= 0.68));
        let c = generate_dataset(&small(8)).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn independent_of_thread_count() {
        let cfg = small(3);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| generate_dataset(&cfg)).unwrap();
        let b = four.install(|| generate_dataset(&cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = small(1);
        c.sigma_t_range = (5.0, 1.0);
        assert!(generate_dataset(&c).is_err());
        let mut c = small(1);
        c.g_range = (-2.0, 0.0);
        assert!(c.validate().is_err());
        let mut c = small(1);
        c.n_samples = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_files() {
        let d = generate_dataset(&DatasetConfig { n_samples: 3, ..small(2) }).unwrap();
        let mut bytes = d.to_bytes();
        assert_eq!(Dataset::from_reader(&bytes[..]).unwrap(), d);
        bytes.pop();
        assert!(Dataset::from_reader(&bytes[..]).is_err());
        bytes[0] = b'X';
        assert!(Dataset::from_reader(&bytes[..]).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let d = generate_dataset(&DatasetConfig { n_samples: 4, ..small(2) }).unwrap();
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("sigma_t,g,phi,n_events"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn serialization_round_trips_bit_exactly(
            recs in proptest::collection::vec(
                (any::<f32>(), any::<f32>(), any::<u32>(), proptest::array::uniform3(any::<f32>())),
                0..20,
            ),
            seed in any::<u64>(),
        ) {
            let samples: Vec<_> = recs.iter().map(|&(a, b, n, x)| TrainingSample {
                sigma_t: a, g: b, phi: a, n_events: n, cos_theta: b, alpha: a, beta: b,
                rep_position: x, rep_direction: x,
            }).collect();
            let d = Dataset { config: DatasetConfig { n_samples: samples.len(), ..small(seed) }, samples };
            let bytes = d.to_bytes();
            let back = Dataset::from_reader(&bytes[..]).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn log1p_law_matches_its_cdf() {
        let law = SigmaTLaw::Log1p;
        let xs: Vec<f64> = (0..10_000).map(|i| law.sample((0.0, 200.0), (i as f64 + 0.5) / 1e4)).collect();
        assert!(xs.iter().all(|&x| (0.0..=200.0).contains(&x)));
        let below = xs.iter().filter(|&&x| x < 4.0).count() as f64 / 1e4;
        assert!((below - 5f64.ln() / 201f64.ln()).abs() < 1e-3);
        assert_eq!(SigmaTLaw::Uniform.sample((2.0, 4.0), 0.5), 3.0);
        let mut c = small(1);
        c.sigma_t_law = law;
        c.n_samples = 20;
        let d = generate_dataset(&c).unwrap();
        assert_eq!(Dataset::from_reader(&d.to_bytes()[..]).unwrap(), d);
    }
}
