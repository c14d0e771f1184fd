//! Mini-batch training over merged scene graphs with checkpoint/resume.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use autodiff::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{mtp_loss, FutureTargets, DEFAULT_HUBER_DELTA};
use crate::metrics::{metrics, Metrics, DEFAULT_MISS_THRESHOLD};
use crate::model::{Model, TrajectorySet};
use crate::optim::{AdamW, CosineSchedule};
use crate::scene::Scene;
use crate::scene_graph::SceneGraph;

pub const LOSS_CSV_HEADER: &str = "step,lr,train_loss,minADE,minFDE,MR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    /// Adam moment decay rates and denominator floor.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear learning-rate ramp over the first steps; 0 disables it.
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub huber_delta: f64,
    pub miss_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 3e-4,
            lr_final: 1e-6,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
            epochs: 10,
            batch_size: 4,
            seed: 0,
            huber_delta: DEFAULT_HUBER_DELTA,
            miss_threshold: DEFAULT_MISS_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0 && self.lr_final > 0.0 && self.weight_decay >= 0.0 && self.huber_delta > 0.0) {
            return Err(Error::Config("rates and huber delta must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::Config("betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step as logged to the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub metrics: Metrics,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.loss, self.metrics.min_ade, self.metrics.min_fde, self.metrics.miss_rate
        )
    }
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub schedule: CosineSchedule,
    /// Completed optimizer steps.
    pub step: usize,
    scenes: Vec<Scene>,
    cache: HashMap<Vec<usize>, (SceneGraph, FutureTargets)>,
}

impl Trainer {
    pub fn new(model: Model, scenes: Vec<Scene>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if scenes.is_empty() {
            return Err(Error::Config("no training scenes".into()));
        }
        for s in &scenes {
            s.validate()?;
            FutureTargets::from_scene(s, model.config.future_steps)?;
        }
        let batches = scenes.len().div_ceil(cfg.batch_size);
        let schedule = CosineSchedule {
            lr_init: cfg.lr_init,
            lr_final: cfg.lr_final,
            total_steps: batches * cfg.epochs,
            warmup_steps: cfg.warmup_steps,
        };
        let opt = AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        };
        Ok(Self {
            model,
            cfg,
            opt,
            schedule,
            step: 0,
            scenes,
            cache: HashMap::new(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.scenes.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.total_steps
    }

    /// Scene indices for a step; the order within an epoch is a seeded
    /// shuffle so resumed runs see the same batches.
    pub fn batch_for_step(&self, step: usize) -> Vec<usize> {
        let bpe = self.batches_per_epoch();
        let (epoch, k) = (step / bpe, step % bpe);
        let mut order: Vec<usize> = (0..self.scenes.len()).collect();
        if bpe > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
        }
        let start = k * self.cfg.batch_size;
        let mut batch = order[start..(start + self.cfg.batch_size).min(order.len())].to_vec();
        batch.sort_unstable();
        batch
    }

    fn prepared(&mut self, batch: &[usize]) -> Result<&(SceneGraph, FutureTargets)> {
        if !self.cache.contains_key(batch) {
            let scenes: Vec<Scene> = batch.iter().map(|&i| self.scenes[i].clone()).collect();
            let graph = self.model.graph_batched(&scenes)?;
            let parts = scenes
                .iter()
                .map(|s| FutureTargets::from_scene(s, self.model.config.future_steps))
                .collect::<Result<Vec<_>>>()?;
            self.cache.insert(batch.to_vec(), (graph, FutureTargets::concat(&parts)?));
        }
        Ok(&self.cache[batch])
    }

    /// Loss and metrics of a batch under the current parameters, plus gradients.
    fn evaluate(&mut self, batch: &[usize]) -> Result<(f64, Metrics, Vec<Vec<f64>>)> {
        let (graph, targets) = self.prepared(batch)?.clone();
        let model = &self.model;
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, true);
        let out = model.forward(&mut g, &p, &graph)?;
        let loss = mtp_loss(&mut g, out.trajectories, &targets, model.config.modes, self.cfg.huber_delta)?;
        let value = g.value(loss).item().expect("scalar loss");
        let preds = TrajectorySet::from_rows(g.value(out.trajectories), model.config.modes, model.config.future_steps)?;
        let m = metrics(&preds, &targets, model.config.future_steps, self.cfg.miss_threshold);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is {value} at step {} (lr {:e}, batch {batch:?})",
                self.step,
                self.schedule.lr(self.step)
            )));
        }
        let grads = model.params.collect_grads(&p, &g.backward(loss)?);
        for ((name, _), gr) in model.params.iter().zip(&grads) {
            if gr.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for {name} at step {} (loss {value})",
                    self.step
                )));
            }
        }
        Ok((value, m, grads))
    }

    pub fn train_step(&mut self) -> Result<StepLog> {
        let batch = self.batch_for_step(self.step);
        let lr = self.schedule.lr(self.step);
        let (loss, metrics, grads) = self.evaluate(&batch)?;
        self.opt.step(&mut self.model.params, &grads, self.step, lr)?;
        let log = StepLog {
            step: self.step,
            lr,
            loss,
            metrics,
        };
        self.step += 1;
        Ok(log)
    }

    /// Loss the next step would see, without updating anything.
    pub fn peek_loss(&mut self) -> Result<f64> {
        let batch = self.batch_for_step(self.step);
        Ok(self.evaluate(&batch)?.0)
    }

    /// Trains until `total_steps` (or `max_steps` total, if smaller),
    /// writing one CSV row per step.
    pub fn run<W: Write>(&mut self, csv: &mut W, max_steps: Option<usize>) -> Result<Vec<StepLog>> {
        if self.step == 0 {
            writeln!(csv, "{LOSS_CSV_HEADER}")?;
        }
        let end = max_steps.map_or(self.total_steps(), |m| m.min(self.total_steps()));
        let mut logs = Vec::new();
        while self.step < end {
            let log = self.train_step()?;
            writeln!(csv, "{}", log.csv_row())?;
            logs.push(log);
        }
        csv.flush()?;
        Ok(logs)
    }

    /// Parameters, optimizer moments and the step counter in one checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut extra = vec![("optim.step".to_string(), Tensor::scalar(self.step as f64))];
        for (name, p) in self.model.params.iter() {
            if p.slots.len() == 2 {
                let shape = p.value.shape().to_vec();
                extra.push((format!("optim.m.{name}"), Tensor::new(shape.clone(), p.slots[0].clone())?));
                extra.push((format!("optim.v.{name}"), Tensor::new(shape, p.slots[1].clone())?));
            }
        }
        self.model.save(path, &extra)
    }

    pub fn resume(path: &Path, scenes: Vec<Scene>, cfg: TrainConfig) -> Result<Self> {
        let (mut model, extra) = Model::load(path)?;
        let extra: HashMap<String, Tensor> = extra.into_iter().collect();
        let step = extra
            .get("optim.step")
            .and_then(|t| t.item())
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))? as usize;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            if let (Some(m), Some(v)) = (extra.get(&format!("optim.m.{name}")), extra.get(&format!("optim.v.{name}"))) {
                model.params.param_mut(id).slots = vec![m.data().to_vec(), v.data().to_vec()];
            }
        }
        let mut t = Trainer::new(model, scenes, cfg)?;
        t.step = step;
        Ok(t)
    }
}

/// Mean loss per epoch from consecutive step logs.
pub fn epoch_means(logs: &[StepLog], steps_per_epoch: usize) -> Vec<f64> {
    logs.chunks(steps_per_epoch)
        .map(|c| c.iter().map(|l| l.loss).sum::<f64>() / c.len() as f64)
        .collect()
}
