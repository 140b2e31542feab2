//! Comparison of learned sphere-step distributions against ground-truth
//! walks on a grid of material parameters.
//!
//! Per cell, `samples` unit-sphere walks are paired with the same number of
//! model draws. The exit model is conditioned on the ground-truth event
//! count of its paired walk, so its error is measured in isolation from the
//! length model.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng::{stream, Domain};
use crate::scatter::ScatterModels;
use crate::stats::{histogram, histogram2d, ks_two_sample, mean, wasserstein1};
use crate::vec3::UnitVec3;
use crate::walker::{exit_coordinates, walk_sphere_with};

/// Upper edge of the `log10 N` histogram.
pub const LOG10_N_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub sigma_t: Vec<f64>,
    pub g: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub bins: usize,
}

impl EvalConfig {
    /// The reference grid of four extinctions by four anisotropies.
    pub fn reference(samples: usize, seed: u64) -> Self {
        Self {
            sigma_t: vec![1.0, 4.0, 20.0, 100.0],
            g: vec![-0.7, 0.0, 0.4, 0.9],
            samples,
            seed,
            bins: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_t.is_empty() || self.g.is_empty() {
            return Err(Error::Config("evaluation grid is empty".into()));
        }
        if self.samples < 2 || self.bins == 0 {
            return Err(Error::Config("need at least 2 samples and 1 bin per cell".into()));
        }
        if let Some(s) = self.sigma_t.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("invalid sigma_t {s}")));
        }
        if let Some(g) = self.g.iter().find(|g| !(g.abs() < 1.0)) {
            return Err(Error::Config(format!("invalid g {g}, need |g| < 1")));
        }
        Ok(())
    }
}

/// Paired ground-truth (`truth`) and model (`model`) histograms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedHistogram {
    pub truth: Vec<u64>,
    pub model: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellHistograms {
    /// `log10 N` over `[0, LOG10_N_MAX]`.
    pub log_n: PairedHistogram,
    /// `cos theta` over `[-1, 1]`.
    pub cos_theta: PairedHistogram,
    /// Row-major `(cos theta, alpha)` over `[-1, 1]^2`.
    pub cos_alpha: PairedHistogram,
    /// Row-major `(cos theta, beta)` over `[-1, 1]^2`.
    pub cos_beta: PairedHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub sigma_t: f64,
    pub g: f64,
    /// Distances between the `ln N` distributions.
    pub w1_log_n: f64,
    pub ks_log_n: f64,
    pub w1_cos_theta: f64,
    pub ks_cos_theta: f64,
    pub mean_n_truth: f64,
    pub mean_n_model: f64,
    pub histograms: CellHistograms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub cells: Vec<CellResult>,
    /// Index of the cell with the largest combined normalized W1.
    pub worst_cell: usize,
}

impl EvalReport {
    pub fn worst(&self) -> &CellResult {
        &self.cells[self.worst_cell]
    }

    pub fn count_cells(&self, pred: impl Fn(&CellResult) -> bool) -> usize {
        self.cells.iter().filter(|c| pred(c)).count()
    }

    /// One row per cell with the four statistics.
    pub fn write_metrics_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "sigma_t,g,w1_log_n,ks_log_n,w1_cos_theta,ks_cos_theta,mean_n_truth,mean_n_model,worst")?;
        for (i, c) in self.cells.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{}",
                c.sigma_t,
                c.g,
                c.w1_log_n,
                c.ks_log_n,
                c.w1_cos_theta,
                c.ks_cos_theta,
                c.mean_n_truth,
                c.mean_n_model,
                u8::from(i == self.worst_cell)
            )?;
        }
        Ok(())
    }
}

struct Draw {
    n_truth: f64,
    n_model: f64,
    truth: [f64; 3],
    model: [f64; 3],
}

fn draw_pair<T: Real>(models: &ScatterModels<T>, sigma_t: f64, g: f64, seed: u64, index: u64) -> Result<Draw> {
    let mut walk_rng = stream(seed, Domain::Evaluation, 2 * index);
    let mut model_rng = stream(seed, Domain::Evaluation, 2 * index + 1);
    let exit = walk_sphere_with(sigma_t, g, 1.0, &mut walk_rng, |_| {})?;
    let c = exit_coordinates(
        UnitVec3::z(),
        UnitVec3::new_normalize(exit.exit_position),
        exit.exit_direction,
    );
    let n_model = models.sample_num_events(sigma_t, g, &mut model_rng)?;
    let m = models.sample_exit(sigma_t, g, exit.n_events as u64, &mut model_rng)?;
    Ok(Draw {
        n_truth: exit.n_events as f64,
        n_model: n_model as f64,
        truth: [c.cos_theta, c.alpha, c.beta],
        model: [m.cos_theta, m.alpha, m.beta],
    })
}

fn paired(f: impl Fn(&[f64], &[f64]) -> Vec<u64>, t: (&[f64], &[f64]), m: (&[f64], &[f64])) -> PairedHistogram {
    PairedHistogram { truth: f(t.0, t.1), model: f(m.0, m.1) }
}

pub fn evaluate_cell<T: Real>(
    models: &ScatterModels<T>,
    sigma_t: f64,
    g: f64,
    cell: usize,
    config: &EvalConfig,
) -> Result<CellResult> {
    let base = (cell * config.samples) as u64;
    let draws = (0..config.samples as u64)
        .into_par_iter()
        .map(|i| draw_pair(models, sigma_t, g, config.seed, base + i))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: &dyn Fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    let (ln_t, ln_m) = (col(&|d| d.n_truth.ln()), col(&|d| d.n_model.ln()));
    let (ct, cm) = (col(&|d| d.truth[0]), col(&|d| d.model[0]));
    let (at, am) = (col(&|d| d.truth[1]), col(&|d| d.model[1]));
    let (bt, bm) = (col(&|d| d.truth[2]), col(&|d| d.model[2]));
    let b = config.bins;
    let log10 = std::f64::consts::LOG10_E;
    let lt: Vec<f64> = ln_t.iter().map(|v| v * log10).collect();
    let lm: Vec<f64> = ln_m.iter().map(|v| v * log10).collect();
    let h1 = |lo: f64, hi: f64| move |x: &[f64], _: &[f64]| histogram(x, lo, hi, b);
    let h2 = |x: &[f64], y: &[f64]| histogram2d(x, y, (-1.0, 1.0), (-1.0, 1.0), b);
    Ok(CellResult {
        sigma_t,
        g,
        w1_log_n: wasserstein1(&ln_t, &ln_m),
        ks_log_n: ks_two_sample(&ln_t, &ln_m),
        w1_cos_theta: wasserstein1(&ct, &cm),
        ks_cos_theta: ks_two_sample(&ct, &cm),
        mean_n_truth: mean(&col(&|d| d.n_truth)),
        mean_n_model: mean(&col(&|d| d.n_model)),
        histograms: CellHistograms {
            log_n: paired(h1(0.0, LOG10_N_MAX), (&lt, &lt), (&lm, &lm)),
            cos_theta: paired(h1(-1.0, 1.0), (&ct, &ct), (&cm, &cm)),
            cos_alpha: paired(h2, (&ct, &at), (&cm, &am)),
            cos_beta: paired(h2, (&ct, &bt), (&cm, &bm)),
        },
    })
}

/// Evaluates every `(sigma_t, g)` cell, `sigma_t` major. The worst cell
/// maximizes `w1_log_n / 0.25 + w1_cos_theta / 0.08`.
pub fn evaluate<T: Real>(models: &ScatterModels<T>, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.sigma_t.len() * config.g.len());
    for &s in &config.sigma_t {
        for &g in &config.g {
            cells.push(evaluate_cell(models, s, g, cells.len(), config)?);
        }
    }
    let score = |c: &CellResult| c.w1_log_n / 0.25 + c.w1_cos_theta / 0.08;
    let worst_cell = (0..cells.len())
        .max_by(|&a, &b| score(&cells[a]).total_cmp(&score(&cells[b])))
        .expect("grid is nonempty");
    Ok(EvalReport { config: config.clone(), cells, worst_cell })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(samples: usize) -> EvalConfig {
        EvalConfig { sigma_t: vec![0.0, 2.0], g: vec![0.0, 0.5], samples, seed: 3, bins: 8 }
    }

    #[test]
    fn reference_grid_has_sixteen_cells() {
        let c = EvalConfig::reference(10, 1);
        assert_eq!(c.sigma_t.len() * c.g.len(), 16);
        c.validate().unwrap();
    }

    #[test]
    fn vacuum_cell_is_exact_for_the_length_model() {
        let models = ScatterModels::<f32>::untrained(1);
        let r = evaluate(&models, &small(200)).unwrap();
        assert_eq!(r.cells.len(), 4);
        for c in &r.cells[..2] {
            assert_eq!(c.w1_log_n, 0.0);
            assert_eq!(c.mean_n_truth, 1.0);
            assert_eq!(c.mean_n_model, 1.0);
        }
    }

    #[test]
    fn histograms_count_every_draw() {
        let models = ScatterModels::<f32>::untrained(2);
        let r = evaluate(&models, &small(150)).unwrap();
        for c in &r.cells {
            let h = &c.histograms;
            for p in [&h.log_n, &h.cos_theta, &h.cos_alpha, &h.cos_beta] {
                assert_eq!(p.truth.iter().sum::<u64>(), 150);
                assert_eq!(p.model.iter().sum::<u64>(), 150);
            }
            assert_eq!(h.cos_alpha.truth.len(), 64);
        }
        let mut csv = Vec::new();
        r.write_metrics_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn deterministic() {
        let models = ScatterModels::<f32>::untrained(4);
        let a = evaluate(&models, &small(100)).unwrap();
        let b = evaluate(&models, &small(100)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_grid() {
        let models = ScatterModels::<f32>::untrained(4);
        let mut c = small(10);
        c.g = vec![1.0];
        assert!(evaluate(&models, &c).is_err());
        c.g = vec![];
        assert!(evaluate(&models, &c).is_err());
    }
}
