//! Supervised training of the fusion network on simulated sample pairs.
//!
//! Every epoch reshuffles the training ids with a stream derived from the
//! run seed and the epoch index, so a run is reproduced exactly by its
//! configuration. The final short batch of an epoch is kept.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::report::{EvalRecord, EvalReport, Metric};
use crate::metrics::{reduced_scores, MetricOptions};
use crate::model::{
    raster_to_tensor, tdnet_loss, write_checkpoint, ForwardOptions, TdnetConfig, TdnetModel, TdnetVars, Variant,
};
use crate::rng::{derive_seed, seeded, SliceRandom};
use crate::tensor::{adam_step, AdamState, Graph, Tensor};
use crate::wald::{Dataset, SamplePair};

pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5e1f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `(first epoch, learning rate)` pairs with strictly increasing epochs,
    /// the first starting at 0.
    pub lr_schedule: Vec<(usize, f32)>,
    pub gamma: f32,
    pub betas: (f32, f32),
    pub weight_decay: f32,
    pub seed: u64,
    /// Also write `epoch_NNNN.ckpt` every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            lr_schedule: vec![(0, 1e-3), (220, 1e-4)],
            gamma: 0.4,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            seed: 2024,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// `step-1e-3` (1e-3, then 1e-4 from epoch 220) or `step-1e-2`
    /// (1e-2, then 1e-3).
    pub fn schedule_preset(name: &str) -> Result<Vec<(usize, f32)>> {
        match name {
            "step-1e-3" => Ok(vec![(0, 1e-3), (220, 1e-4)]),
            "step-1e-2" => Ok(vec![(0, 1e-2), (220, 1e-3)]),
            other => Err(Error::Config(format!("unknown learning-rate preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        match self.lr_schedule.first() {
            Some(&(0, _)) => {}
            _ => return Err(Error::Config("learning-rate schedule must start at epoch 0".into())),
        }
        if self.lr_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(
                "learning-rate schedule epochs must be strictly increasing".into(),
            ));
        }
        if self.lr_schedule.iter().any(|&(_, lr)| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas ({b1}, {b2}) outside [0, 1)")));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.lr_schedule
            .iter()
            .take_while(|&&(start, _)| start <= epoch)
            .last()
            .map_or(self.lr_schedule[0].1, |&(_, lr)| lr)
    }
}

/// Stacked tensors of several sample pairs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<u64>,
    pub lrms: Tensor,
    pub pan: Tensor,
    pub gt: Tensor,
    pub gt_d: Tensor,
}

impl Batch {
    pub fn new(samples: &[&SamplePair]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let stack = |f: &dyn Fn(&SamplePair) -> Tensor| -> Result<Tensor> {
            let ts: Vec<Tensor> = samples.iter().map(|s| f(s)).collect();
            Tensor::stack(&ts.iter().collect::<Vec<_>>())
        };
        Ok(Batch {
            ids: samples.iter().map(|s| s.id).collect(),
            lrms: stack(&|s| raster_to_tensor(&s.lrms))?,
            pan: stack(&|s| raster_to_tensor(&s.pan))?,
            gt: stack(&|s| raster_to_tensor(&s.gt))?,
            gt_d: stack(&|s| raster_to_tensor(&s.gt_d))?,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn record_loss(
    g: &mut Graph,
    model: &TdnetModel,
    trainable: bool,
    batch: &Batch,
    gamma: f32,
) -> Result<(Vec<crate::tensor::Var>, crate::tensor::Var)> {
    let params = model.bind(g, trainable);
    let lrms = g.constant(batch.lrms.clone());
    let pan = g.constant(batch.pan.clone());
    let gt = g.constant(batch.gt.clone());
    let gt_d = g.constant(batch.gt_d.clone());
    let out: TdnetVars = model.forward_graph(g, &params, lrms, pan, ForwardOptions::default())?;
    let loss = tdnet_loss(g, &out, gt, gt_d, gamma)?;
    Ok((params, loss))
}

/// Loss of one batch with frozen parameters.
pub fn batch_loss(model: &TdnetModel, batch: &Batch, gamma: f32) -> Result<f64> {
    let mut g = Graph::new();
    let (_, loss) = record_loss(&mut g, model, false, batch, gamma)?;
    Ok(g.value(loss).item() as f64)
}

/// Loss of one batch and the gradient of every parameter. Parameters off
/// the loss path get zero gradients.
pub fn loss_and_gradients(model: &TdnetModel, batch: &Batch, gamma: f32) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut g = Graph::new();
    let (params, loss) = record_loss(&mut g, model, true, batch, gamma)?;
    let value = g.value(loss).item() as f64;
    g.backward(loss)?;
    let grads = params
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
        .collect();
    Ok((value, grads))
}

/// Sample-weighted mean loss over `samples`, evaluated in batches of
/// `batch_size` without gradient recording.
pub fn validate(model: &TdnetModel, samples: &[SamplePair], gamma: f32, batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let refs: Vec<&SamplePair> = samples.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = Batch::new(chunk)?;
        total += batch_loss(model, &batch, gamma)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub epochs: Vec<EpochRecord>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{},{:e}", r.epoch, r.train_loss, val, r.lr);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TdnetModel,
    pub best: TdnetModel,
    /// Epoch after which `best` was taken; `None` for the initialization.
    pub best_epoch: Option<usize>,
    pub log: LossLog,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Trains `model`. `best` follows the validation loss, or the epoch's mean
/// training loss when `val` is empty. Checkpoints
/// and the loss log go to `out_dir` when given.
pub fn train_model(
    mut model: TdnetModel,
    train: &[SamplePair],
    val: &[SamplePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let score = |m: &TdnetModel| -> Result<f64> {
        if val.is_empty() {
            validate(m, train, cfg.gamma, cfg.batch_size)
        } else {
            validate(m, val, cfg.gamma, cfg.batch_size)
        }
    };
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = if cfg.epochs > 0 { score(&model)? } else { f64::INFINITY };
    let mut state = AdamState::new();
    let mut loss_log = LossLog::default();
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(
            derive_seed(cfg.seed, SHUFFLE_STREAM),
            epoch as u64,
        )));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&SamplePair> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&samples)?;
            let (loss, grads) = loss_and_gradients(&model, &batch, cfg.gamma)?;
            if !loss.is_finite() {
                return Err(non_finite(out_dir, epoch, step + 1, &batch, loss));
            }
            step += 1;
            for (t, g) in model.params.tensors_mut().iter_mut().zip(&grads) {
                t.zero_grad();
                t.accumulate_grad(g);
            }
            let mut params: Vec<&mut Tensor> = model.params.tensors_mut().iter_mut().collect();
            adam_step(&mut params, &mut state, lr, cfg.betas, cfg.weight_decay, step)?;
            model.params.tensors_mut().iter_mut().for_each(Tensor::zero_grad);
            step_losses.push(loss);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(validate(&model, val, cfg.gamma, cfg.batch_size)?)
        };
        loss_log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let current = val_loss.unwrap_or(train_loss);
        if current < best_score {
            best_score = current;
            best = model.clone();
            best_epoch = Some(epoch);
        }
        if let (Some(dir), Some(every)) = (out_dir, cfg.checkpoint_every) {
            if (epoch + 1) % every == 0 {
                write_checkpoint(dir.join(format!("epoch_{:04}.ckpt", epoch + 1)), &model)?;
            }
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:?} lr {lr}");
    }

    if let Some(dir) = out_dir {
        write_checkpoint(dir.join(FINAL_CHECKPOINT), &model)?;
        write_checkpoint(dir.join(BEST_CHECKPOINT), &best)?;
        fs::write(dir.join(LOSS_LOG_FILE), loss_log.to_csv())?;
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        log: loss_log,
        step_losses,
    })
}

fn non_finite(out_dir: Option<&Path>, epoch: usize, step: u64, batch: &Batch, loss: f64) -> Error {
    let ids = batch.ids.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let msg = format!("loss {loss} at epoch {epoch}, step {step}, batch ids [{ids}]");
    if let Some(dir) = out_dir {
        let _ = fs::write(dir.join("nonfinite_batch.txt"), format!("{msg}\n"));
    }
    Error::Numeric(msg)
}

/// Initial model seed of a run.
pub fn init_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, INIT_STREAM)
}

/// Trains a fresh model on the dataset's train split, validating on its
/// validation split.
pub fn train(
    dataset: &Dataset,
    model_config: &TdnetConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let train_set = dataset.load_all(&dataset.manifest.splits.train)?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let val_set = dataset.load_all(&dataset.manifest.splits.val)?;
    let model = TdnetModel::new(model_config.clone(), init_seed(cfg))?;
    train_model(model, &train_set, &val_set, cfg, out_dir)
}

/// Reduced-resolution scores of a model on `samples`, one record per sample.
pub fn evaluate_model(
    model: &TdnetModel,
    samples: &[SamplePair],
    label: &str,
    ratio: usize,
) -> Result<Vec<EvalRecord>> {
    let opts = MetricOptions::default();
    samples
        .iter()
        .map(|s| {
            let fused = model.fuse_raster(&s.lrms, &s.pan)?;
            let window = opts.window.min(s.gt.height()).min(s.gt.width());
            let scores = reduced_scores(&fused, &s.gt, ratio, &MetricOptions { window, ..opts })?;
            Ok(EvalRecord::new(label, s.id.to_string())
                .with(Metric::Sam, scores.sam)
                .with(Metric::Ergas, scores.ergas)
                .with(Metric::Scc, scores.scc)
                .with(Metric::Q2n, scores.q2n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub parameters: usize,
    pub gamma: f32,
    pub final_train_loss: Option<f64>,
    /// Validation ℓ₁ of the final output alone, comparable across variants
    /// with one or two levels.
    pub val_output_l1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub report: EvalReport,
    pub rows: Vec<AblationRow>,
    pub dataset_fingerprint: u64,
}

/// Trains one variant of `base` under `cfg`. Single-level variants train
/// with `gamma = 0` since they have no first-level output.
pub fn ablation_run(
    variant: Variant,
    base: &TdnetConfig,
    train: &[SamplePair],
    val: &[SamplePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(TdnetModel, AblationRow)> {
    let config = variant.apply(base);
    let mut run_cfg = cfg.clone();
    if config.levels == 1 {
        run_cfg.gamma = 0.0;
    }
    let model = TdnetModel::new(config, init_seed(&run_cfg))?;
    let parameters = model.parameter_count();
    let outcome = train_model(model, train, val, &run_cfg, out_dir)?;
    let val_output_l1 = if val.is_empty() {
        None
    } else {
        Some(validate(&outcome.model, val, 0.0, run_cfg.batch_size)?)
    };
    let row = AblationRow {
        name: variant.name().to_string(),
        parameters,
        gamma: run_cfg.gamma,
        final_train_loss: outcome.log.epochs.last().map(|r| r.train_loss),
        val_output_l1,
    };
    Ok((outcome.model, row))
}

/// Trains the full network and every ablation under one budget and seed
/// and scores each on the test split.
pub fn ablation_suite(
    dataset: &Dataset,
    base: &TdnetConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<AblationOutcome> {
    let train_set = dataset.load_all(&dataset.manifest.splits.train)?;
    let val_set = dataset.load_all(&dataset.manifest.splits.val)?;
    let test_set = dataset.load_all(&dataset.manifest.splits.test)?;
    let fingerprint = dataset.manifest.fingerprint();
    let mut report = EvalReport::default();
    report
        .provenance
        .push(("dataset_fingerprint".into(), format!("{fingerprint:016x}")));
    report.provenance.push(("seed".into(), cfg.seed.to_string()));
    let mut rows = Vec::new();
    let variants = std::iter::once(Variant::Full).chain(Variant::ABLATIONS);
    for variant in variants {
        let dir: Option<PathBuf> = out_dir.map(|d| d.join(variant.name()));
        let (model, row) = ablation_run(variant, base, &train_set, &val_set, cfg, dir.as_deref())?;
        for record in evaluate_model(&model, &test_set, variant.name(), dataset.manifest.sensor.ratio)? {
            report.push(record);
        }
        rows.push(row);
    }
    Ok(AblationOutcome {
        report,
        rows,
        dataset_fingerprint: fingerprint,
    })
}
