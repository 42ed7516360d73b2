//! Training loop.
//!
//! Each step takes one mini-batch, builds its soft labels from within-batch
//! distances only, runs the encoders, and applies AdamW on
//! `l_sw + lambda_fair * l_fair`. Everything is driven by one seed.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geodesy::distance_matrix;
use crate::locfeat::{featurize_samples, LocationFeature};
use crate::model::{backward, forward, similarity, EncoderParams, ModelConfig};
use crate::objective::{total_loss, Direction};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::supervision::{soft_labels, KernelConfig, SpatialWeightMatrix};

/// Supervision used during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Distance-decayed soft labels plus the regional fairness penalty.
    #[default]
    Sw,
    /// One-hot labels, no fairness penalty.
    Baseline,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Sw => "sw",
            TrainMode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sw" => Ok(TrainMode::Sw),
            "baseline" => Ok(TrainMode::Baseline),
            other => Err(Error::invalid(format!("unknown mode `{other}` (expected sw or baseline)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub lambda_fair: f64,
    pub seed: u64,
    pub stratify_regions: bool,
    pub kernel: KernelConfig,
    pub symmetric_loss: bool,
    pub freeze_tau: bool,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub token_dim: usize,
    pub vocab_size: usize,
    pub fourier_freqs: usize,
    /// Keep all-digit caption tokens (coordinates) in the token block.
    pub numeric_tokens: bool,
    /// Train/test split used by the CLI pipeline; stored in checkpoints.
    pub train_frac: f64,
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Sw,
            epochs: 60,
            batch_size: 64,
            base_lr: 3e-3,
            weight_decay: 1e-2,
            lambda_fair: 0.1,
            seed: 0,
            stratify_regions: true,
            kernel: KernelConfig::default(),
            symmetric_loss: false,
            freeze_tau: false,
            warmup_frac: 0.05,
            hidden_dim: 64,
            embed_dim: 32,
            token_dim: 32,
            vocab_size: 4096,
            fourier_freqs: 6,
            numeric_tokens: false,
            train_frac: 0.8,
            split_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::invalid("base_lr must be > 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if !(self.lambda_fair.is_finite() && self.lambda_fair >= 0.0) {
            return Err(Error::invalid("lambda_fair must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid("warmup_frac must be in [0, 1)"));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::invalid("train_frac must be in (0, 1)"));
        }
        self.kernel.validate()?;
        self.model_config(1).validate()
    }

    pub fn model_config(&self, image_dim: usize) -> ModelConfig {
        ModelConfig {
            image_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            token_dim: self.token_dim,
            vocab_size: self.vocab_size,
            fourier_freqs: self.fourier_freqs,
            numeric_tokens: self.numeric_tokens,
        }
    }

    pub fn direction(&self) -> Direction {
        if self.symmetric_loss {
            Direction::Symmetric
        } else {
            Direction::ImageToText
        }
    }

    /// Fairness weight actually applied (zero in baseline mode).
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            TrainMode::Sw => self.lambda_fair,
            TrainMode::Baseline => 0.0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_clip: f64,
    pub l_sw: f64,
    pub l_fair: f64,
    pub l_total: f64,
    pub lr: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<StepRecord>,
    pub dropped_batches: usize,
}

impl TrainOutcome {
    /// Mean of `l_sw` per epoch, in epoch order.
    pub fn epoch_mean_l_sw(&self) -> Vec<f64> {
        let epochs = self.log.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let rows: Vec<f64> = self.log.iter().filter(|r| r.epoch == e).map(|r| r.l_sw).collect();
                rows.iter().sum::<f64>() / rows.len().max(1) as f64
            })
            .collect()
    }
}

/// Writes the log as one JSON object per line.
pub fn write_log<W: Write>(log: &[StepRecord], mut out: W) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

/// Index order for one epoch, already cut into batches. Size-1 tails are
/// dropped; the count of dropped batches is returned alongside.
pub fn epoch_batches(
    samples: &[Sample],
    batch_size: usize,
    stratify: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<usize>>, usize) {
    let order: Vec<usize> = if stratify {
        let n_regions = samples.iter().map(|s| s.region_id + 1).max().unwrap_or(0);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_regions];
        for (i, s) in samples.iter().enumerate() {
            groups[s.region_id].push(i);
        }
        groups.retain(|g| !g.is_empty());
        for g in &mut groups {
            g.shuffle(rng);
        }
        groups.shuffle(rng);
        // round-robin so consecutive indices come from different regions
        let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
        (0..longest)
            .flat_map(|k| groups.iter().filter_map(move |g| g.get(k).copied()))
            .collect()
    } else {
        let mut o: Vec<usize> = (0..samples.len()).collect();
        o.shuffle(rng);
        o
    };
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let mut dropped = 0;
    if batches.last().is_some_and(|b| b.len() < 2) {
        batches.pop();
        dropped = 1;
    }
    (batches, dropped)
}

/// Inputs shared by every step: image matrix and location features.
pub struct Prepared {
    pub images: Array2<f64>,
    pub loc: Vec<LocationFeature>,
}

pub fn prepare(ds: &Dataset, model: &ModelConfig) -> Result<Prepared> {
    let dim = ds.feature_dim().ok_or_else(|| Error::invalid("empty dataset"))?;
    let mut images = Array2::zeros((ds.len(), dim));
    for (mut row, s) in images.rows_mut().into_iter().zip(&ds.samples) {
        if s.image_feature.len() != dim {
            return Err(Error::invalid(format!("sample `{}` has a feature of length {}", s.id, s.image_feature.len())));
        }
        row.assign(&ndarray::ArrayView1::from(&s.image_feature[..]));
    }
    let loc = featurize_samples(&ds.samples, model.vocab_size, model.fourier_freqs, model.numeric_tokens)?;
    Ok(Prepared { images, loc })
}

/// Trains both encoders on `ds` (already the training split).
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    ds.validate()?;
    let image_dim = ds.feature_dim().expect("non-empty");
    let prepared = prepare(ds, &cfg.model_config(image_dim))?;
    let n_regions = ds.n_regions();
    let lambda = cfg.effective_lambda();
    let dir = cfg.direction();

    let mut params = EncoderParams::init(&cfg.model_config(image_dim), cfg.seed)?;
    let mut opt = AdamW::new(&params, AdamWConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);

    // batch layouts are drawn up front so the schedule knows the step count
    let mut plan = Vec::with_capacity(cfg.epochs);
    let mut dropped_batches = 0;
    for _ in 0..cfg.epochs {
        let (batches, dropped) = epoch_batches(&ds.samples, cfg.batch_size, cfg.stratify_regions, &mut rng);
        if dropped > 0 {
            log::info!("dropping a size-1 tail batch");
        }
        dropped_batches += dropped;
        plan.push(batches);
    }
    let total_steps: u64 = plan.iter().map(|b| b.len() as u64).sum();
    if total_steps == 0 {
        return Err(Error::invalid("dataset too small to form a batch of two"));
    }
    let warmup = (cfg.warmup_frac * total_steps as f64).round() as u64;

    let mut log = Vec::with_capacity(total_steps as usize);
    let mut step: u64 = 0;
    for (epoch, batches) in plan.iter().enumerate() {
        for idx in batches {
            let batch: Vec<Sample> = idx.iter().map(|&i| ds.samples[i].clone()).collect();
            let labels = match cfg.mode {
                TrainMode::Sw => {
                    let pts: Vec<_> = batch.iter().map(|s| s.point).collect();
                    soft_labels(&distance_matrix(&pts)?, &batch, &cfg.kernel)?
                }
                TrainMode::Baseline => SpatialWeightMatrix::identity(batch.len()),
            };
            let regions: Vec<usize> = batch.iter().map(|s| s.region_id).collect();
            let images = prepared.images.select(Axis(0), idx);
            let loc: Vec<LocationFeature> = idx.iter().map(|&i| prepared.loc[i].clone()).collect();

            let (emb, cache) = forward(&params, images.view(), &loc)?;
            let logits = similarity(&emb, &params);
            let (losses, dlogits) = total_loss(&logits, &labels, &regions, n_regions, lambda, dir)?;
            let mut grads = backward(&params, &cache, &dlogits)?;
            if cfg.freeze_tau {
                grads.log_inv_tau = 0.0;
            }
            let lr = cosine_lr(step + 1, total_steps + 1, cfg.base_lr, warmup);
            opt.step(&mut params, &grads, lr, cfg.weight_decay)?;
            params.clamp_temperature();
            if !params.is_finite() {
                return Err(Error::ContractViolation(format!("non-finite parameter after step {}", step + 1)));
            }
            step += 1;
            log.push(StepRecord {
                step,
                epoch,
                l_clip: losses.l_clip,
                l_sw: losses.l_sw,
                l_fair: losses.l_fair,
                l_total: losses.l_total,
                lr,
                tau: 1.0 / params.inv_tau(),
            });
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        dropped_batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_world, WorldConfig};

    fn tiny_world() -> Dataset {
        generate_world(&WorldConfig {
            n_cities: 3,
            streets_per_city: 2,
            samples_per_street: 6,
            feature_dim: 12,
            signal_dim: 8,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            hidden_dim: 8,
            embed_dim: 4,
            token_dim: 4,
            vocab_size: 64,
            fourier_freqs: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stratified_batches_mix_regions() {
        let ds = tiny_world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (batches, dropped) = epoch_batches(&ds.samples, 8, true, &mut rng);
        assert_eq!(dropped, 0);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 36);
        for b in &batches {
            let mut r: Vec<usize> = b.iter().map(|&i| ds.samples[i].region_id).collect();
            r.dedup();
            assert!(r.len() >= 2);
        }
    }

    #[test]
    fn size_one_tail_dropped() {
        let ds = tiny_world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (batches, dropped) = epoch_batches(&ds.samples[..33], 8, false, &mut rng);
        assert_eq!(dropped, 1);
        assert_eq!(batches.len(), 4);
        let (batches, dropped) = epoch_batches(&ds.samples[..34], 8, false, &mut rng);
        assert_eq!(dropped, 0);
        assert_eq!(batches.last().unwrap().len(), 2);
    }

    #[test]
    fn deterministic_and_finite() {
        let ds = tiny_world();
        let a = train(&ds, &tiny_cfg()).unwrap();
        let b = train(&ds, &tiny_cfg()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert!(a.params.is_finite());
        assert_eq!(a.log.len(), 3 * 5);
        assert!(a.log.iter().all(|r| r.tau >= 0.01 - 1e-12 && r.tau <= 1.0 + 1e-12));
    }

    #[test]
    fn baseline_mode_is_hard_label_training() {
        let ds = tiny_world();
        let cfg = TrainConfig {
            mode: TrainMode::Baseline,
            ..tiny_cfg()
        };
        let out = train(&ds, &cfg).unwrap();
        for r in &out.log {
            assert_eq!(r.l_sw, r.l_clip);
            assert_eq!(r.l_total, r.l_sw);
        }
    }

    #[test]
    fn frozen_temperature_stays_put() {
        let ds = tiny_world();
        let cfg = TrainConfig {
            freeze_tau: true,
            ..tiny_cfg()
        };
        let out = train(&ds, &cfg).unwrap();
        assert!(out.log.iter().all(|r| (r.tau - 0.07).abs() < 1e-12));
    }

    #[test]
    fn config_validation() {
        let ds = tiny_world();
        for bad in [
            TrainConfig { batch_size: 1, ..tiny_cfg() },
            TrainConfig { epochs: 0, ..tiny_cfg() },
            TrainConfig { base_lr: 0.0, ..tiny_cfg() },
            TrainConfig { lambda_fair: -1.0, ..tiny_cfg() },
        ] {
            assert!(train(&ds, &bad).is_err());
        }
        assert!(train(&Dataset::default(), &tiny_cfg()).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sw".parse::<TrainMode>().unwrap(), TrainMode::Sw);
        assert_eq!("baseline".parse::<TrainMode>().unwrap(), TrainMode::Baseline);
        assert!("clip".parse::<TrainMode>().is_err());
    }
}
