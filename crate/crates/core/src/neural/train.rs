use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::{CombinationNet, ItemResult, LossOptions, ModelConfig, TrainItem};
use crate::beamforming::{training_null_ranges, BeamformerSet, Rtf, NULLS_FOUR, NULLS_TWO};
use crate::evaluation::si_sdr;
use crate::pipeline::{target_rtf, MixtureInputs, RtfSource};
use crate::scene::Manifest;
use crate::spectral::StftPlan;
use crate::{Error, MultichannelSpectrogram, Result, StftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub stft: StftConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub loss: LossOptions,
    /// Number of initial beams `J`.
    pub beams: usize,
    /// Null-DOA ranges for training draws; defaults follow `beams`.
    pub null_ranges: Option<Vec<(f64, f64)>>,
    pub seed: u64,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub init: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            stft: StftConfig::default(),
            epochs: 100,
            batch_size: 4,
            lr: 6e-4,
            lr_decay: 0.8,
            decay_every: 10,
            loss: LossOptions::default(),
            beams: 2,
            null_ranges: None,
            seed: 0,
            init: None,
        }
    }
}

impl TrainConfig {
    /// Learning rate of the zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        self.null_ranges
            .clone()
            .unwrap_or_else(|| training_null_ranges(self.beams))
    }

    /// Null DOAs used for validation and inference with `beams` beams.
    pub fn fixed_nulls(beams: usize) -> Vec<f64> {
        match beams {
            2 => NULLS_TWO.to_vec(),
            4 => NULLS_FOUR.to_vec(),
            j => (0..j).map(|k| 180.0 * (k as f64 + 0.5) / j as f64).collect(),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// A mixture prepared for training: STFT, oracle RTF and reference signal.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub x: MultichannelSpectrogram,
    pub a: Rtf,
    pub reference: Arc<Vec<f64>>,
    pub spacing: f64,
}

impl Sample {
    pub fn from_inputs(inputs: &MixtureInputs, plan: &StftPlan) -> Result<Self> {
        Ok(Self {
            id: inputs.id.clone(),
            x: plan.stft(&inputs.mixture)?,
            a: target_rtf(inputs, plan, RtfSource::Oracle)?,
            reference: Arc::new(inputs.target_image.channel(0).to_vec()),
            spacing: inputs.scene.mic_spacing,
        })
    }

    /// Training item with null beams at `doas`.
    pub fn item(&self, doas: &[f64], stft: &StftConfig) -> Result<TrainItem> {
        Ok(TrainItem {
            x: self.x.clone(),
            a: self.a.clone(),
            init: BeamformerSet::nulls(&self.a, doas, self.spacing, stft)?,
            reference: self.reference.clone(),
        })
    }
}

/// Loads every manifest entry of the corpus at `root`.
pub fn load_samples(root: &Path, stft: &StftConfig) -> Result<Vec<Sample>> {
    let manifest = Manifest::load(root)?;
    let plan = StftPlan::new(*stft)?;
    manifest
        .entries
        .par_iter()
        .map(|e| Sample::from_inputs(&MixtureInputs::load(root, e)?, &plan))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_si_sdr: f64,
    /// Mean normalized entropy of the final weights over the epoch.
    pub weight_entropy: f64,
    pub val_si_sdr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: CombinationNet,
    pub best: CombinationNet,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Mean SI-SDR of the network on `samples` with fixed null DOAs.
pub fn validate(net: &CombinationNet, samples: &[Sample], beams: usize, stft: &StftConfig) -> Result<f64> {
    let plan = StftPlan::new(*stft)?;
    let doas = TrainConfig::fixed_nulls(beams);
    let scores = samples
        .par_iter()
        .map(|s| {
            let item = s.item(&doas, stft)?;
            let out = net.infer(&item.x, &item.a, &item.init)?;
            let est = plan.istft(&out.estimate, s.reference.len())?;
            si_sdr(est.channel(0), &s.reference)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn meta(cfg: &TrainConfig, epoch: usize, metric: f64) -> serde_json::Value {
    serde_json::json!({
        "epoch": epoch,
        "beams": cfg.beams,
        "seed": cfg.seed,
        "lr": cfg.lr,
        "lambda": cfg.loss.lambda,
        "stft": cfg.stft,
        "metric": metric,
    })
}

/// Trains on in-memory samples. With `out_dir`, writes `best.ckpt`,
/// `last.ckpt` and `train_log.jsonl` there.
pub fn train_samples(
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 || cfg.beams == 0 {
        return Err(Error::Config("batch size and beam count must be positive".into()));
    }
    let mut net = match &cfg.init {
        Some(path) => {
            let (net, _) = load_checkpoint(path)?;
            if net.config != cfg.model {
                return Err(Error::Config("initial checkpoint has a different model configuration".into()));
            }
            net
        }
        None => CombinationNet::new(cfg.model.clone(), cfg.seed)?,
    };
    let plan = Arc::new(StftPlan::new(cfg.stft)?);
    let ranges = cfg.ranges();
    if ranges.len() != cfg.beams {
        return Err(Error::Config(format!("{} null ranges for {} beams", ranges.len(), cfg.beams)));
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            Some((File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };

    let shapes: Vec<usize> = net.params.tensors().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(&shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0, net.clone());

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut sdr_sum, mut ent_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let items = batch
                .iter()
                .map(|&i| {
                    let doas: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
                    train[i].item(&doas, &cfg.stft)
                })
                .collect::<Result<Vec<_>>>()?;
            let results = items
                .par_iter()
                .map(|it| net.loss_and_grads(it, &plan, &cfg.loss))
                .collect::<Result<Vec<ItemResult>>>()?;
            let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
            for r in &results {
                loss_sum += r.loss;
                sdr_sum += r.si_sdr;
                ent_sum += r.entropy_final;
                for (g, rg) in grads.iter_mut().zip(&r.grads) {
                    for (a, b) in g.iter_mut().zip(rg) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / results.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            let finite = results.iter().all(|r| r.loss.is_finite()) && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(diverged(&net, cfg, epoch, out_dir));
            }
            let mut values: Vec<Vec<f64>> = net.params.tensors().iter().map(|t| t.data.clone()).collect();
            adam.update(&mut values, &grads, lr);
            for (t, v) in net.params.tensors_mut().iter_mut().zip(values) {
                t.data = v;
            }
            if !net.params.is_finite() {
                return Err(diverged(&net, cfg, epoch, out_dir));
            }
        }
        let n = train.len() as f64;
        let val_si_sdr = if val.is_empty() {
            None
        } else {
            Some(validate(&net, val, cfg.beams, &cfg.stft)?)
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / n,
            train_si_sdr: sdr_sum / n,
            weight_entropy: ent_sum / n,
            val_si_sdr,
        };
        // without a validation set the running training SI-SDR selects the best epoch
        let metric = val_si_sdr.unwrap_or(entry.train_si_sdr);
        if metric > best.0 {
            best = (metric, epoch + 1, net.clone());
            if let Some(dir) = out_dir {
                save_checkpoint(&dir.join("best.ckpt"), &net, &meta(cfg, epoch + 1, metric))?;
            }
        }
        if let Some((f, p)) = log_file.as_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(f, "{line}").map_err(|e| Error::io(p.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("last.ckpt"), &net, &meta(cfg, epoch + 1, metric))?;
        }
        log.push(entry);
    }
    Ok(TrainOutcome {
        net,
        best: best.2,
        best_epoch: best.1,
        log,
    })
}

fn diverged(net: &CombinationNet, cfg: &TrainConfig, epoch: usize, out_dir: Option<&Path>) -> Error {
    let dump = out_dir
        .map(|d| d.join("diverged.ckpt"))
        .unwrap_or_else(|| std::env::temp_dir().join("tfbeam-diverged.ckpt"));
    if let Err(e) = save_checkpoint(&dump, net, &meta(cfg, epoch + 1, f64::NAN)) {
        return e;
    }
    Error::Diverged { epoch: epoch + 1, dump }
}

/// Trains on the corpus at `train_root`, validating on `val_root` when given.
pub fn train(cfg: &TrainConfig, train_root: &Path, val_root: Option<&Path>, out_dir: &Path) -> Result<TrainOutcome> {
    let train = load_samples(train_root, &cfg.stft)?;
    let val = match val_root {
        Some(r) => load_samples(r, &cfg.stft)?,
        None => Vec::new(),
    };
    train_samples(cfg, &train, &val, Some(out_dir))
}
