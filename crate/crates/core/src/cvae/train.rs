use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{elbo_loss, weighted_elbo_grad, CvaeModel, ElboWorkspace, ModelKind, Normalization};
use crate::cvae::Architecture;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig};
use crate::num::Real;
use crate::rng::{fill_normal, stream, Domain};

/// Flattened `(target, condition)` pairs in network space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData<T> {
    pub p_out: usize,
    pub p_in: usize,
    pub x: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> TrainingData<T> {
    pub fn new(p_out: usize, p_in: usize, x: Vec<T>, c: Vec<T>) -> Result<Self> {
        if p_out == 0 || x.len() % p_out != 0 {
            return Err(Error::Shape { what: "targets", expected: p_out, got: x.len() });
        }
        if c.len() != x.len() / p_out * p_in {
            return Err(Error::Shape { what: "conditions", expected: x.len() / p_out * p_in, got: c.len() });
        }
        Ok(Self { p_out, p_in, x, c })
    }

    pub fn from_dataset(kind: ModelKind, dataset: &Dataset, norm: &Normalization) -> Result<Self> {
        let (mut x, mut c) = (Vec::new(), Vec::new());
        for s in &dataset.samples {
            x.extend(norm.target(kind, s).iter().map(|&v| T::lit(v)));
            c.extend(norm.condition(kind, s).iter().map(|&v| T::lit(v)));
        }
        Self::new(kind.p_out(), kind.p_in(), x, c)
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.p_out
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn get(&self, i: usize) -> (&[T], &[T]) {
        (&self.x[i * self.p_out..(i + 1) * self.p_out], &self.c[i * self.p_in..(i + 1) * self.p_in])
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub optimizer: AdamWConfig,
    /// Fraction of the steps over which the KL gradient weight ramps
    /// linearly from 0 to 1.
    #[serde(default)]
    pub kl_warmup: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of samples held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    pub norm: Normalization,
    /// Initial bias of the log-variance outputs.
    pub log_var_bias: f64,
    /// Where to write the last parameters if training diverges.
    #[serde(default)]
    pub dump_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn new(kind: ModelKind) -> Self {
        Self {
            arch: kind.default_arch(),
            optimizer: AdamWConfig::default(),
            kl_warmup: 0.0,
            batch_size: 512,
            epochs: 100,
            validation_fraction: 0.05,
            seed: 0,
            norm: Normalization::default(),
            log_var_bias: -2.0,
            dump_path: None,
        }
    }

    /// Shortened schedule for a single workstation core. With only 20
    /// epochs, small batches, a larger step and a KL warm-up are needed for
    /// the decoders to use their latent space.
    pub fn desk(kind: ModelKind) -> Self {
        let mut c = Self { epochs: 20, batch_size: 32, kl_warmup: 0.3, ..Self::new(kind) };
        c.optimizer.lr = 3e-3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup) {
            return Err(Error::Config(format!("KL warm-up fraction {} outside [0, 1]", self.kl_warmup)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean negative ELBO over accepted batches.
    pub train_loss: f64,
    /// Mean negative ELBO on the held-out split, NaN when there is none.
    pub val_loss: f64,
    /// Batches skipped because the loss or gradient was non-finite.
    pub rejected_batches: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: CvaeModel<T>,
    pub history: Vec<EpochLog>,
}

/// Trains `kind` on the samples of `dataset`.
pub fn train_model<T: Real>(
    kind: ModelKind,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let data = TrainingData::from_dataset(kind, dataset, &config.norm)?;
    let mut out = train_on(kind, &data, config)?;
    out.model.dataset_fingerprint = dataset.fingerprint();
    Ok(out)
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Trains a fresh model on arbitrary network-space data.
pub fn train_on<T: Real>(
    kind: ModelKind,
    data: &TrainingData<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.p_in != kind.p_in() || data.p_out != kind.p_out() {
        return Err(Error::Shape { what: "training data width", expected: kind.p_in() + kind.p_out(), got: data.p_in + data.p_out });
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut init_rng = stream(config.seed, Domain::Init, 0);
    let mut model = CvaeModel::new(kind, config.arch, config.norm, T::lit(config.log_var_bias), &mut init_rng)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream(config.seed, Domain::Training, u64::MAX));
    let n_val = if data.len() >= 2 {
        ((data.len() as f64 * config.validation_fraction).ceil() as usize).min(data.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let latent = config.arch.latent;
    let mut val_eps = vec![T::zero(); n_val * latent];
    fill_normal(&mut stream(config.seed, Domain::Training, u64::MAX - 1), &mut val_eps);

    let enc = model.encoder.as_ref().expect("fresh model has an encoder");
    let mut opt_enc = AdamW::new(config.optimizer, enc.params().len())?;
    let mut opt_dec = AdamW::new(config.optimizer, model.decoder.params().len())?;
    let mut g_enc = vec![T::zero(); enc.params().len()];
    let mut g_dec = vec![T::zero(); model.decoder.params().len()];
    let mut ws = ElboWorkspace::default();
    let mut eps = vec![T::zero(); latent];
    let mut history = Vec::with_capacity(config.epochs);

    let steps_per_epoch = train_idx.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut rng = stream(config.seed, Domain::Training, epoch as u64);
        train_idx.shuffle(&mut rng);
        let (mut loss_sum, mut loss_count, mut rejected, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for batch in train_idx.chunks(config.batch_size) {
            batches += 1;
            let progress = step as f64 / total_steps as f64;
            let kl_weight = if config.kl_warmup > 0.0 { (progress / config.kl_warmup).min(1.0) } else { 1.0 };
            step += 1;
            g_enc.iter_mut().for_each(|g| *g = T::zero());
            g_dec.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::one() / T::lit(batch.len() as f64);
            let mut batch_loss = 0.0;
            let mut ok = true;
            for &i in batch {
                let (x, c) = data.get(i);
                fill_normal(&mut rng, &mut eps);
                let l = weighted_elbo_grad(&model, x, c, &eps, scale, T::lit(kl_weight), &mut ws, &mut g_enc, &mut g_dec)?;
                if !l.is_finite() {
                    ok = false;
                }
                batch_loss += l;
            }
            if !ok || !all_finite(&g_enc) || !all_finite(&g_dec) {
                rejected += 1;
                continue;
            }
            opt_enc.step(model.encoder.as_mut().unwrap().params_mut(), &g_enc)?;
            opt_dec.step(model.decoder.params_mut(), &g_dec)?;
            loss_sum += batch_loss;
            loss_count += batch.len();
        }
        if rejected == batches {
            if let Some(path) = &config.dump_path {
                model.save(path)?;
                log::error!("{kind}: diverged at epoch {epoch}; state written to {}", path.display());
            }
            return Err(Error::Diverged { epoch });
        }
        let mut val_loss = f64::NAN;
        if n_val > 0 {
            let mut sum = 0.0;
            for (k, &i) in val_idx.iter().enumerate() {
                let (x, c) = data.get(i);
                sum += elbo_loss(&model, x, c, &val_eps[k * latent..(k + 1) * latent])?;
            }
            val_loss = sum / n_val as f64;
        }
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / loss_count as f64,
            val_loss,
            rejected_batches: rejected,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{kind} epoch {:>3}: train {:.5} val {:.5} rejected {} ({:.1}s)",
            epoch, log.train_loss, log.val_loss, rejected, log.seconds
        );
        history.push(log);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;

    fn synthetic(n: usize, seed: u64, sd: f64) -> TrainingData<f64> {
        let mut rng = stream(seed, Domain::Audit, 0);
        let (mut x, mut c) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let c0: f64 = crate::rng::uniform(&mut rng);
            let c1: f64 = crate::rng::uniform(&mut rng);
            c.extend([c0, c1]);
            x.push(0.8 * c0 - 0.3 + sd * normal::<f64, _>(&mut rng));
        }
        TrainingData::new(1, 2, x, c).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            epochs: 30,
            optimizer: AdamWConfig { lr: 5e-3, ..AdamWConfig::default() },
            ..TrainConfig::new(ModelKind::LengthGen)
        }
    }

    #[test]
    fn negative_elbo_bounds_true_entropy() {
        let sd = 0.2f64;
        let data = synthetic(6000, 1, sd);
        let out = train_on(ModelKind::LengthGen, &data, &quick_config()).unwrap();
        let first = out.history.first().unwrap().val_loss;
        let last = out.history.last().unwrap().val_loss;
        assert!(last < first, "validation loss did not improve: {first} -> {last}");

        // Mean negative ELBO over many noise draws on fresh data is an upper
        // bound of the model cross-entropy, hence of the true entropy.
        let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sd * sd).ln();
        let test = synthetic(4000, 2, sd);
        let mut rng = stream(3, Domain::Audit, 0);
        let mut sum = 0.0;
        let mut eps = [0.0; 2];
        for i in 0..test.len() {
            let (x, c) = test.get(i);
            fill_normal(&mut rng, &mut eps);
            sum += elbo_loss(&out.model, x, c, &eps).unwrap();
        }
        let neg_elbo = sum / test.len() as f64;
        assert!(neg_elbo > entropy - 0.05, "-ELBO {neg_elbo} below entropy {entropy}");
        assert!(neg_elbo < entropy + 0.3, "-ELBO {neg_elbo} far from entropy {entropy}");
    }

    #[test]
    fn learns_constant_target() {
        let n = 3000;
        let mut rng = stream(4, Domain::Audit, 0);
        let mut c = vec![0.0; 2 * n];
        fill_normal(&mut rng, &mut c);
        let data = TrainingData::new(1, 2, vec![0.5; n], c).unwrap();
        let out = train_on(ModelKind::LengthGen, &data, &quick_config()).unwrap();
        let mut acc = 0.0;
        let mut out_v = [0.0];
        for i in 0..2000 {
            let cond = [normal::<f64, _>(&mut rng), (i % 7) as f64 / 7.0];
            out.model.sample(&cond, &mut rng, &mut out_v).unwrap();
            acc += out_v[0];
        }
        assert!((acc / 2000.0 - 0.5).abs() < 0.05, "mean sample {}", acc / 2000.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = synthetic(500, 5, 0.1);
        let cfg = TrainConfig { epochs: 3, batch_size: 50, ..TrainConfig::new(ModelKind::LengthGen) };
        let a = train_on(ModelKind::LengthGen, &data, &cfg).unwrap();
        let b = train_on(ModelKind::LengthGen, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.history[2].train_loss, b.history[2].train_loss);
    }

    #[test]
    fn divergence_is_reported_and_dumped() {
        let mut data = synthetic(100, 6, 0.1);
        data.x.iter_mut().for_each(|x| *x = f64::NAN);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.ssnn");
        let cfg = TrainConfig { epochs: 2, dump_path: Some(path.clone()), ..TrainConfig::new(ModelKind::LengthGen) };
        let err = train_on(ModelKind::LengthGen, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0 }));
        assert!(path.exists());
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = synthetic(10, 7, 0.1);
        assert!(train_on(ModelKind::PathGen, &data, &TrainConfig::new(ModelKind::PathGen)).is_err());
        let cfg = TrainConfig { validation_fraction: 1.0, ..TrainConfig::new(ModelKind::LengthGen) };
        assert!(train_on(ModelKind::LengthGen, &data, &cfg).is_err());
        assert!(TrainingData::<f64>::new(1, 2, vec![0.0; 3], vec![0.0; 5]).is_err());
    }
}
