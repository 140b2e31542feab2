//! Binary model bundles.
//!
//! Layout, little-endian: magic `SSNN`, version, kind tag, `P_in`, `P_out`,
//! `D`, `W`, `L` (all u32), the two normalization constants (f32), the
//! 32-byte dataset fingerprint, an encoder flag (u32), then the decoder and,
//! if flagged, the encoder. A network is its layer count (u32) followed per
//! layer by `rows`, `cols` (u32), the row-major weights and the biases (f32).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, CvaeModel, ModelKind, Normalization};
use crate::error::{Error, Result};
use crate::nn::MlpWeights;
use crate::num::Real;

pub const MODEL_MAGIC: &[u8; 4] = b"SSNN";
pub const MODEL_VERSION: u32 = 1;

/// Largest accepted layer dimension; guards allocations on corrupt input.
const MAX_DIM: usize = 1 << 16;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_net<T: Real>(out: &mut Vec<u8>, net: &MlpWeights<T>) {
    put_u32(out, net.n_layers());
    for l in 0..net.n_layers() {
        let layer = net.layer(l);
        put_u32(out, layer.rows);
        put_u32(out, layer.cols);
        for v in layer.weights.iter().chain(layer.biases) {
            put_f32(out, v.as_f64() as f32);
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("model file truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()? as usize;
        if v > MAX_DIM {
            return Err(Error::Format(format!("implausible dimension {v}")));
        }
        Ok(v)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn net<T: Real>(&mut self) -> Result<MlpWeights<T>> {
        let n = self.dim()?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let rows = self.dim()?;
            let cols = self.dim()?;
            let w = (0..rows * cols).map(|_| self.f32().map(|v| T::lit(v as f64))).collect::<Result<Vec<_>>>()?;
            let b = (0..rows).map(|_| self.f32().map(|v| T::lit(v as f64))).collect::<Result<Vec<_>>>()?;
            layers.push((rows, cols, w, b));
        }
        let net = MlpWeights::from_layers(layers)?;
        if !net.params().iter().all(|v| v.is_finite()) {
            return Err(Error::Format("non-finite network parameter".into()));
        }
        Ok(net)
    }
}

impl<T: Real> CvaeModel<T> {
    /// Serializes with parameters rounded to `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u32(&mut out, MODEL_VERSION as usize);
        put_u32(&mut out, self.kind.tag() as usize);
        put_u32(&mut out, self.kind.p_in());
        put_u32(&mut out, self.kind.p_out());
        put_u32(&mut out, self.arch.depth);
        put_u32(&mut out, self.arch.width);
        put_u32(&mut out, self.arch.latent);
        put_f32(&mut out, self.norm.sigma_max);
        put_f32(&mut out, self.norm.n_ref);
        out.extend_from_slice(&self.dataset_fingerprint);
        put_u32(&mut out, self.encoder.is_some() as usize);
        write_net(&mut out, &self.decoder);
        if let Some(enc) = &self.encoder {
            write_net(&mut out, enc);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        if cur.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model bundle (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Version { expected: MODEL_VERSION, found: version });
        }
        let kind = ModelKind::from_tag(cur.u32()?)?;
        let (p_in, p_out) = (cur.dim()?, cur.dim()?);
        if p_in != kind.p_in() || p_out != kind.p_out() {
            return Err(Error::Format(format!("{kind}: stored widths ({p_in}, {p_out}) do not match the kind")));
        }
        let arch = Architecture { depth: cur.dim()?, width: cur.dim()?, latent: cur.dim()? };
        let norm = Normalization { sigma_max: cur.f32()?, n_ref: cur.f32()? };
        if !(norm.sigma_max > 0.0 && norm.n_ref > 1.0 && norm.sigma_max.is_finite() && norm.n_ref.is_finite()) {
            return Err(Error::Format(format!("invalid normalization {norm:?}")));
        }
        let mut dataset_fingerprint = [0u8; 32];
        dataset_fingerprint.copy_from_slice(cur.take(32)?);
        let has_encoder = match cur.u32()? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad encoder flag {v}"))),
        };
        let decoder = cur.net()?;
        let encoder = if has_encoder { Some(cur.net()?) } else { None };
        if cur.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - cur.pos)));
        }
        let model = Self { kind, arch, norm, encoder, decoder, dataset_fingerprint };
        model.validate()?;
        Ok(model)
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn export(&self) -> ModelExport {
        ModelExport {
            kind: self.kind,
            arch: self.arch,
            norm: self.norm,
            condition: self.kind.condition_names().iter().map(|s| s.to_string()).collect(),
            target: self.kind.target_names().iter().map(|s| s.to_string()).collect(),
            dataset_fingerprint: self.dataset_fingerprint.iter().map(|b| format!("{b:02x}")).collect(),
            decoder: LayerExport::from_net(&self.decoder),
            encoder: self.encoder.as_ref().map(LayerExport::from_net),
        }
    }
}

/// Human-readable view of a model, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub kind: ModelKind,
    pub arch: Architecture,
    pub norm: Normalization,
    pub condition: Vec<String>,
    pub target: Vec<String>,
    pub dataset_fingerprint: String,
    pub decoder: Vec<LayerExport>,
    pub encoder: Option<Vec<LayerExport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExport {
    /// One row per output unit.
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<f32>,
}

impl LayerExport {
    fn from_net<T: Real>(net: &MlpWeights<T>) -> Vec<LayerExport> {
        (0..net.n_layers())
            .map(|l| {
                let layer = net.layer(l);
                LayerExport {
                    weights: layer
                        .weights
                        .chunks(layer.cols)
                        .map(|r| r.iter().map(|v| v.as_f64() as f32).collect())
                        .collect(),
                    biases: layer.biases.iter().map(|v| v.as_f64() as f32).collect(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn model(kind: ModelKind) -> CvaeModel<f32> {
        let mut rng = stream(11, Domain::Init, 0);
        let mut m = CvaeModel::new(kind, kind.default_arch(), Normalization::default(), -2.0, &mut rng).unwrap();
        m.dataset_fingerprint = [7; 32];
        m
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in ModelKind::ALL {
            let m = model(kind);
            assert_eq!(CvaeModel::<f32>::from_bytes(&m.to_bytes()).unwrap(), m);
            let d = m.clone().without_encoder();
            assert_eq!(CvaeModel::<f32>::from_bytes(&d.to_bytes()).unwrap(), d);
            let wide: CvaeModel<f64> = CvaeModel::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(wide.cast::<f32>(), m);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ssnn");
        let m = model(ModelKind::EventGen);
        m.save(&p).unwrap();
        assert_eq!(CvaeModel::<f32>::load(&p).unwrap(), m);
    }

    #[test]
    fn corrupt_bundles_are_rejected() {
        let bytes = model(ModelKind::PathGen).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CvaeModel::<f32>::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(CvaeModel::<f32>::from_bytes(&bad), Err(Error::Version { .. })));
        let mut bad = bytes.clone();
        bad[8] = 0; // kind tag now says LengthGen
        assert!(CvaeModel::<f32>::from_bytes(&bad).is_err());
        assert!(CvaeModel::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(CvaeModel::<f32>::from_bytes(&bad).is_err());
        assert!(CvaeModel::<f32>::from_bytes(&[]).is_err());
    }

    #[test]
    fn export_mirrors_weights() {
        let m = model(ModelKind::LengthGen);
        let e = m.export();
        assert_eq!(e.decoder.len(), m.decoder.n_layers());
        assert_eq!(e.decoder[0].weights.len(), m.decoder.layer(0).rows);
        assert_eq!(e.decoder[0].weights[0][1], m.decoder.layer(0).weights[1]);
        assert_eq!(e.dataset_fingerprint.len(), 64);
        let json = serde_json::to_string(&e).unwrap();
        let back: ModelExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }
}
