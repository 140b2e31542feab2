use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Linear RGB image with per-pixel estimator variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at the top.
    pub pixels: Vec<[f32; 3]>,
    /// Variance of each pixel mean, per channel.
    pub variance: Vec<[f32; 3]>,
    pub spp: usize,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            variance: vec![[0.0; 3]; width * height],
            spp: 0,
        }
    }

    pub fn constant(width: usize, height: usize, v: [f32; 3]) -> Self {
        Self { pixels: vec![v; width * height], ..Self::new(width, height) }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().flatten().all(|v| v.is_finite())
    }

    /// Mean estimator variance over pixels and channels.
    pub fn mean_variance(&self) -> f64 {
        let n = (self.variance.len() * 3).max(1) as f64;
        self.variance.iter().flatten().map(|&v| v as f64).sum::<f64>() / n
    }

    /// Portable float map; rows are stored bottom to top.
    pub fn write_pfm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "PF\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.pixels.len() * 12);
        for y in (0..self.height).rev() {
            for p in &self.pixels[y * self.width..(y + 1) * self.width] {
                for c in p {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_pfm(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next = |r: &mut BufReader<_>| -> Result<String> {
            line.clear();
            r.read_line(&mut line)?;
            Ok(line.trim().to_string())
        };
        if next(&mut r)? != "PF" {
            return Err(Error::Format("only colour PFM files are supported".into()));
        }
        let dims = next(&mut r)?;
        let mut it = dims.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(width)), Some(Ok(height))) = (it.next(), it.next()) else {
            return Err(Error::Format(format!("bad PFM dimensions '{dims}'")));
        };
        let scale: f64 = next(&mut r)?.parse().map_err(|_| Error::Format("bad PFM scale".into()))?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() != width * height * 12 {
            return Err(Error::Format(format!("PFM holds {} bytes, expected {}", data.len(), width * height * 12)));
        }
        let f = |b: &[u8]| {
            let a: [u8; 4] = b.try_into().unwrap();
            if scale < 0.0 { f32::from_le_bytes(a) } else { f32::from_be_bytes(a) }
        };
        let mut img = Self::new(width, height);
        for (i, chunk) in data.chunks_exact(12).enumerate() {
            let (row, x) = (i / width, i % width);
            let y = height - 1 - row;
            img.pixels[y * width + x] = [f(&chunk[0..4]), f(&chunk[4..8]), f(&chunk[8..12])];
        }
        Ok(img)
    }

    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pfm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// 8-bit sRGB after clamping to `[0, 1]`.
    pub fn to_srgb8(&self) -> Vec<u8> {
        self.pixels.iter().flatten().map(|&v| (srgb_encode(v.clamp(0.0, 1.0)) * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.to_srgb8(), self.width as u32, self.height as u32, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn srgb_encode(v: f32) -> f32 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Channel-pooled RMSE and MAE over linear values.
pub fn image_metrics(a: &Image, b: &Image) -> Result<(f64, f64)> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape { what: "image pixels", expected: a.width * a.height, got: b.width * b.height });
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, q) in a.pixels.iter().flatten().zip(b.pixels.iter().flatten()) {
        let d = *p as f64 - *q as f64;
        se += d * d;
        ae += d.abs();
    }
    let n = (a.pixels.len() * 3).max(1) as f64;
    Ok(((se / n).sqrt(), ae / n))
}
