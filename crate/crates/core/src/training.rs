//! AdamW with complex moments, the mini-batch loop, multi-resolution
//! schedules and checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PoissonDataset;
use crate::discretization::{Discretization, Field};
use crate::error::{ContainerError, Error, Result};
use crate::io::{container_read, container_write, Container};
use crate::layers::{dataset_stats, field_batch, ParamVars, StandardizedField};
use crate::losses::LossSpec;
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, ParamStore, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Per-parameter moments. Complex parameters keep a complex first moment
/// and a real second moment of `|g|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let (m, v) = store
            .iter()
            .map(|(_, p)| {
                let s = p.value.shape();
                (Tensor::zeros(s, p.value.dtype()), Tensor::zeros(s, DType::Real))
            })
            .unzip();
        OptimState {
            config,
            step: 0,
            m,
            v,
        }
    }
}

/// One bias-corrected AdamW step with decoupled weight decay at rate `lr`.
/// Fails before touching anything if a gradient is not finite.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut OptimState, lr: f64) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Shape(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for ((_, p), g) in store.iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter `{}`", p.name)));
        }
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!("gradient shape of `{}`", p.name)));
        }
    }
    let AdamConfig {
        beta1: b1,
        beta2: b2,
        eps,
        weight_decay: wd,
        ..
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.into_iter().enumerate() {
        let mut value = store.get(id).value.clone();
        let g = &grads[i];
        let v = state.v[i].to_vec_real()?;
        let mut v_new = Vec::with_capacity(v.len());
        match value.dtype() {
            DType::Real => {
                let gv = g.real_data()?;
                let mut m = state.m[i].to_vec_real()?;
                let mut out = value.to_vec_real()?;
                for k in 0..out.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * gv[k];
                    let vk = b2 * v[k] + (1.0 - b2) * gv[k] * gv[k];
                    v_new.push(vk);
                    out[k] *= 1.0 - lr * wd;
                    out[k] -= lr * (m[k] / c1) / ((vk / c2).sqrt() + eps);
                }
                state.m[i] = Tensor::real(value.shape(), m)?;
                value = Tensor::real(value.shape(), out)?;
            }
            DType::Complex => {
                let gc = g.to_complex();
                let gv = gc.complex_data()?;
                let mut m = state.m[i].complex_data()?.to_vec();
                let mut out = value.complex_data()?.to_vec();
                for k in 0..out.len() {
                    m[k] = m[k] * b1 + gv[k] * (1.0 - b1);
                    let vk = b2 * v[k] + (1.0 - b2) * gv[k].norm_sqr();
                    v_new.push(vk);
                    out[k] *= 1.0 - lr * wd;
                    let denom = (vk / c2).sqrt() + eps;
                    out[k] -= m[k] * (lr / c1 / denom);
                }
                state.m[i] = Tensor::complex(value.shape(), m)?;
                value = Tensor::complex(value.shape(), out)?;
            }
        }
        state.v[i] = Tensor::real(value.shape(), v_new)?;
        store.set(id, value)?;
    }
    Ok(())
}

/// Resolutions visited in a range of epochs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// Exclusive upper epoch bound; the last stage extends to the end.
    pub until_epoch: usize,
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Halve the learning rate every this many epochs (0: never).
    pub halve_every: usize,
    /// Every epoch visits each sample once per listed resolution.
    pub resolutions: Vec<usize>,
    /// Overrides `resolutions` per epoch range when non-empty.
    pub curriculum: Vec<Stage>,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            adam: AdamConfig::default(),
            halve_every: 20,
            resolutions: vec![32],
            curriculum: Vec::new(),
            loss: LossSpec::single(crate::losses::LossKind::L2),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, message: &str| Error::Config {
            key: format!("training.{key}"),
            message: message.into(),
        };
        if self.epochs == 0 {
            return Err(cfg("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(cfg("batch_size", "must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(cfg("adam.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(cfg("adam", "betas must lie in [0, 1)"));
        }
        if !(self.adam.eps > 0.0) || !(self.adam.weight_decay >= 0.0) {
            return Err(cfg("adam", "eps must be positive and weight_decay nonnegative"));
        }
        if self.resolutions.is_empty() && self.curriculum.is_empty() {
            return Err(cfg("resolutions", "the schedule is empty"));
        }
        if self.resolutions.contains(&0) || self.curriculum.iter().any(|s| s.resolutions.is_empty() || s.resolutions.contains(&0)) {
            return Err(cfg("resolutions", "resolutions must be positive and stages non-empty"));
        }
        if let Err(e) = LossSpec::new(self.loss.terms().to_vec()) {
            return Err(cfg("loss", &e.to_string()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = if self.halve_every == 0 { 0 } else { epoch / self.halve_every };
        self.adam.lr * 0.5f64.powi(halvings as i32)
    }
}

/// Per epoch, the `(resolution, pass)` pairs in visiting order.
pub fn multires_schedule(config: &TrainConfig, native: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let res = if config.curriculum.is_empty() {
            &config.resolutions
        } else {
            &config
                .curriculum
                .iter()
                .find(|s| epoch < s.until_epoch)
                .unwrap_or_else(|| config.curriculum.last().unwrap())
                .resolutions
        };
        if let Some(&r) = res.iter().find(|&&r| r > native) {
            return Err(Error::InvalidArgument(format!(
                "resolution {r} exceeds the dataset's native {native}"
            )));
        }
        out.push(res.iter().enumerate().map(|(pass, &r)| (r, pass)).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassMetrics {
    pub resolution: usize,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub passes: Vec<PassMetrics>,
    /// Mean over all steps of the epoch.
    pub train_loss: f64,
}

/// Training data at one resolution, standardized once.
struct Prepared {
    disc: Arc<Discretization>,
    x: Tensor,
    y: Tensor,
    /// Forcing in physical units divided by the output scale.
    f: Tensor,
}

fn stack(fields: &[Field]) -> Result<Tensor> {
    field_batch(fields)
}

fn prepare(model: &Model, data: &PoissonDataset, res: usize) -> Result<Prepared> {
    let (disc, forcing, solution) = data.at_resolution(res)?;
    let unwrap = |v: Vec<StandardizedField>| v.into_iter().map(StandardizedField::into_inner).collect::<Vec<_>>();
    let x = stack(&unwrap(model.standardize_inputs(&forcing)?))?;
    let y = stack(&unwrap(model.standardize_targets(&solution)?))?;
    let s = model.output_stats.as_ref().expect("stats set").std[0].max(crate::layers::NORM_EPS);
    let f = stack(&forcing)?;
    let f = Tensor::real(f.shape(), f.real_data()?.iter().map(|v| v / s).collect())?;
    Ok(Prepared { disc, x, y, f })
}

fn rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let s = t.shape();
    let per: usize = s[1..].iter().product();
    let v = t.real_data()?;
    let mut out = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        out.extend_from_slice(&v[i * per..(i + 1) * per]);
    }
    let mut shape = s.to_vec();
    shape[0] = idx.len();
    Tensor::real(&shape, out)
}

/// Mini-batch loop with a stateful cache of prepared resolutions.
pub struct Trainer<'a> {
    pub model: Model,
    pub optim: OptimState,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    data: &'a PoissonDataset,
    cache: BTreeMap<usize, Prepared>,
    schedule: Vec<Vec<(usize, usize)>>,
}

impl<'a> Trainer<'a> {
    /// Computes normalization statistics from `train` unless the model
    /// already carries them.
    pub fn new(mut model: Model, config: TrainConfig, train: &'a PoissonDataset) -> Result<Self> {
        let schedule = multires_schedule(&config, train.native_resolution())?;
        if model.input_stats.is_none() {
            model.set_stats(dataset_stats(&train.forcing)?, dataset_stats(&train.solution)?);
        }
        let optim = OptimState::new(&model.store, config.adam);
        Ok(Trainer {
            model,
            optim,
            config,
            epoch: 0,
            data: train,
            cache: BTreeMap::new(),
            schedule,
        })
    }

    /// Continue from a checkpoint.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig, train: &'a PoissonDataset) -> Result<Self> {
        let mut t = Trainer::new(checkpoint.model, config, train)?;
        t.optim = checkpoint.optim;
        t.epoch = checkpoint.epoch;
        Ok(t)
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One epoch of the schedule.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let plan = self
            .schedule
            .get(epoch)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("epoch {epoch} is past the schedule")))?;
        let lr = self.config.lr_at(epoch);
        let mut passes = Vec::new();
        let (mut total, mut steps) = (0.0, 0usize);
        for (res, pass) in plan {
            if !self.cache.contains_key(&res) {
                let p = prepare(&self.model, self.data, res)?;
                self.cache.insert(res, p);
            }
            let prep = &self.cache[&res];
            let count = prep.x.shape()[0];
            let mut order: Vec<usize> = (0..count).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(((epoch as u64) << 16) | pass as u64);
            order.shuffle(&mut rng);
            let (mut sum, mut n) = (0.0, 0usize);
            for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
                let tape = Tape::new();
                let p = ParamVars::leaves(&tape, &self.model.store);
                let x = tape.constant(rows(&prep.x, batch)?);
                let y = tape.constant(rows(&prep.y, batch)?);
                let f = self
                    .config
                    .loss
                    .needs_forcing()
                    .then(|| rows(&prep.f, batch).map(|t| tape.constant(t)))
                    .transpose()?;
                let pred = self.model.forward(&p, x, &prep.disc)?;
                let loss = self.config.loss.evaluate(pred, y, f, &prep.disc)?;
                let value = loss.value().item()?;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, resolution {res}, batch {b}"
                    )));
                }
                let grads = tape.backward(loss)?;
                let g: Vec<Tensor> = p
                    .vars()
                    .iter()
                    .map(|v| grads.get_or_zeros(*v))
                    .collect::<Result<_>>()?;
                adam_step(&mut self.model.store, &g, &mut self.optim, lr)?;
                sum += value;
                n += 1;
            }
            passes.push(PassMetrics {
                resolution: res,
                train_loss: sum / n as f64,
            });
            total += sum;
            steps += n;
        }
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch,
            lr,
            passes,
            train_loss: total / steps.max(1) as f64,
        })
    }

    /// Remaining epochs; `log` receives CSV rows as they are produced.
    pub fn run(&mut self, mut log: Option<&mut CsvLog>) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while !self.is_done() {
            let m = self.train_epoch()?;
            log::info!("epoch {} lr {:.3e} loss {:.6e}", m.epoch, m.lr, m.train_loss);
            if let Some(l) = log.as_deref_mut() {
                l.record(&m);
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optim: self.optim.clone(),
            epoch: self.epoch,
        }
    }
}

/// `epoch,resolution,train_loss,lr` rows.
#[derive(Debug, Clone, Default)]
pub struct CsvLog {
    text: String,
}

impl CsvLog {
    pub const HEADER: &'static str = "epoch,resolution,train_loss,lr";

    pub fn new() -> Self {
        CsvLog {
            text: format!("{}\n", Self::HEADER),
        }
    }

    pub fn record(&mut self, m: &EpochMetrics) {
        for p in &m.passes {
            let _ = writeln!(self.text, "{},{},{:e},{:e}", m.epoch, p.resolution, p.train_loss, m.lr);
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub const CHECKPOINT_VERSION: u64 = 1;
const CHECKPOINT_KIND: &str = "neurop-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optim: OptimState,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        let model = &self.model;
        for (i, (_, p)) in model.store.iter().enumerate() {
            c.push(format!("param/{}", p.name), p.value.clone())?;
            c.push(format!("adam.m/{}", p.name), self.optim.m[i].clone())?;
            c.push(format!("adam.v/{}", p.name), self.optim.v[i].clone())?;
        }
        for (tag, s) in [("input", &model.input_stats), ("output", &model.output_stats)] {
            if let Some(s) = s {
                c.push(format!("stats/{tag}/mean"), Tensor::real(&[s.mean.len()], s.mean.clone())?)?;
                c.push(format!("stats/{tag}/std"), Tensor::real(&[s.std.len()], s.std.clone())?)?;
            }
        }
        c.set_meta("kind", CHECKPOINT_KIND.into());
        c.set_meta("checkpoint_version", CHECKPOINT_VERSION.into());
        c.set_meta("model", serde_json::to_value(&model.config).expect("config serializes"));
        c.set_meta("adam", serde_json::to_value(self.optim.config).expect("config serializes"));
        c.set_meta("step", self.optim.step.into());
        c.set_meta("epoch", self.epoch.into());
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let hdr = |e: ContainerError| Error::Incompatible(e.to_string());
        if c.meta_value("kind").map_err(hdr)?.as_str() != Some(CHECKPOINT_KIND) {
            return Err(Error::Incompatible("not a checkpoint file".into()));
        }
        let version = c.meta_value("checkpoint_version").map_err(hdr)?.as_u64();
        if version != Some(CHECKPOINT_VERSION) {
            return Err(Error::Incompatible(format!(
                "checkpoint version {version:?}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let parse = |key: &str| c.meta_value(key).map_err(hdr).cloned();
        let config: ModelConfig =
            serde_json::from_value(parse("model")?).map_err(|e| Error::Incompatible(e.to_string()))?;
        let adam: AdamConfig =
            serde_json::from_value(parse("adam")?).map_err(|e| Error::Incompatible(e.to_string()))?;
        let step = parse("step")?.as_u64().ok_or_else(|| Error::Incompatible("step".into()))?;
        let epoch = parse("epoch")?.as_u64().ok_or_else(|| Error::Incompatible("epoch".into()))? as usize;
        let mut model = Model::new(&config)?;
        let mut optim = OptimState::new(&model.store, adam);
        optim.step = step;
        let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (i, (id, name)) in ids.into_iter().enumerate() {
            let get = |prefix: &str| -> Result<Tensor> {
                c.require(&format!("{prefix}/{name}")).cloned().map_err(hdr)
            };
            model.store.set(id, get("param")?)?;
            optim.m[i] = get("adam.m")?;
            optim.v[i] = get("adam.v")?;
        }
        let stats = |tag: &str| -> Result<Option<crate::layers::NormStats>> {
            match (c.get(&format!("stats/{tag}/mean")), c.get(&format!("stats/{tag}/std"))) {
                (Some(m), Some(s)) => Ok(Some(crate::layers::NormStats {
                    mean: m.to_vec_real()?,
                    std: s.to_vec_real()?,
                })),
                _ => Ok(None),
            }
        };
        model.input_stats = stats("input")?;
        model.output_stats = stats("output")?;
        Ok(Checkpoint { model, optim, epoch })
    }
}

pub fn checkpoint_save(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    container_write(path, &checkpoint.to_container()?)
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_container(&container_read(path)?)
}
