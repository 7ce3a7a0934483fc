//! Operator fine-tuning: clean-embedding regression with AdamW,
//! condition dropping for guidance, freeze masks for partial fine-tuning,
//! and bit-exact checkpoint/resume.
//!
//! Gradients are accumulated per batch with a fixed reduction order, so a
//! given seed produces the same parameters regardless of thread count.

use std::io::{Read as _, Write as _};
use std::path::Path;
use std::time::Instant;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Sample};
use crate::embedding::Embedding;
use crate::ops::{drop_conditions, loss_and_grad, DropConfig, LossKind, OperatorSpec};
use crate::prior::{build_sequence, freeze_policy, FreezeMask, FreezePolicy, PriorConfig, PriorNet};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Overrides the operator spec's condition-drop settings.
    pub drop_override: Option<DropConfig>,
    pub log_every: usize,
}

impl TrainConfig {
    /// Desk-scale preset: large enough steps to learn a toy operator in
    /// a few thousand updates.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            weight_decay: 1e-2,
            grad_clip: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            drop_override: None,
            log_every: 200,
        }
    }

    /// Published fine-tuning recipe: lr 1e-5, batch size 1.
    pub fn reference(seed: u64) -> Self {
        TrainConfig { lr: 1e-5, batch_size: 1, ..Self::toy(seed) }
    }
}

/// Checks a dataset against an operator spec before training.
pub fn validate_dataset(spec: &OperatorSpec, dataset: &Dataset) -> Result<()> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = dataset.dim();
    let needs_text = matches!(spec.loss, LossKind::MsePlusSimilarity { .. });
    for s in &dataset.samples {
        if s.target.dim() != d {
            return Err(Error::DimMismatch { expected: d, got: s.target.dim() });
        }
        for (slot, e) in &s.conditions {
            if !spec.slot_map.contains_slot(*slot) {
                return Err(Error::SlotOutOfRange(*slot));
            }
            if e.dim() != d {
                return Err(Error::DimMismatch { expected: d, got: e.dim() });
            }
        }
        if needs_text && s.e_text.is_none() {
            return Err(Error::MissingTextEmbedding);
        }
    }
    Ok(())
}

pub struct Trainer {
    net: PriorNet,
    schedule: NoiseSchedule,
    spec: OperatorSpec,
    policy: FreezePolicy,
    config: TrainConfig,
    /// Per-parameter trainable flags expanded from the tensor-level mask.
    trainable: Vec<bool>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    rng: ChaCha8Rng,
}

fn expand_mask(net: &PriorNet, mask: &FreezeMask) -> Vec<bool> {
    let mut flags = vec![false; net.n_params()];
    for (i, info) in net.layout().iter().enumerate() {
        if mask.tensor_trainable(i) {
            flags[info.offset..info.offset + info.len()].fill(true);
        }
    }
    flags
}

impl Trainer {
    pub fn new(
        net: PriorNet,
        schedule: NoiseSchedule,
        spec: OperatorSpec,
        policy: FreezePolicy,
        config: TrainConfig,
    ) -> Result<Self> {
        spec.validate()?;
        let mask = freeze_policy(&net, &policy)?;
        if !mask.any_trainable() {
            return Err(Error::NothingToTrain);
        }
        let trainable = expand_mask(&net, &mask);
        let n = net.n_params();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            net,
            schedule,
            spec,
            policy,
            config,
            trainable,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            rng,
        })
    }

    pub fn net(&self) -> &PriorNet {
        &self.net
    }

    pub fn into_net(self) -> PriorNet {
        self.net
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn drop_config(&self) -> DropConfig {
        self.config.drop_override.unwrap_or(self.spec.drop)
    }

    /// Loss and parameter gradient for one sample under a derived seed.
    fn sample_loss_grad(&self, sample: &Sample, seed: u64) -> Result<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.gen_range(0..self.schedule.steps());
        let conditions = drop_conditions(&sample.conditions, &self.drop_config(), &mut rng);
        let d = sample.target.dim();
        let target = sample.target.to_f64();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x_t = self.schedule.forward_noise_f64(&target, t, &eps)?;
        let noised = Embedding::from_f64(&x_t, sample.target.space_tag())?;
        let seq = build_sequence(&conditions, t, &noised)?;
        let (pred, cache) = self.net.forward(&seq)?;
        let e_text = sample.e_text.as_ref().map(|e| e.to_f64());
        let (loss, dpred) = loss_and_grad(&self.spec.loss, &pred, &target, e_text.as_deref())?;
        let grads = self.net.backward(&cache, &dpred);
        Ok((loss, grads))
    }

    /// One optimizer update over a freshly drawn batch; returns the mean
    /// batch loss.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<f64> {
        validate_dataset(&self.spec, dataset)?;
        let n = dataset.samples.len();
        // Batch draws come from the trainer rng sequentially, so the
        // parallel section below cannot perturb the random stream.
        let draws: Vec<(usize, u64)> = (0..self.config.batch_size)
            .map(|_| (self.rng.gen_range(0..n), self.rng.gen()))
            .collect();

        let results: Vec<Result<(f64, Vec<f64>)>> = draws
            .par_iter()
            .map(|&(idx, seed)| self.sample_loss_grad(&dataset.samples[idx], seed))
            .collect();

        let scale = 1.0 / self.config.batch_size as f64;
        let mut loss_sum = 0.0;
        let mut grad = vec![0.0; self.net.n_params()];
        for r in results {
            let (loss, g) = r?;
            loss_sum += loss;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let mean_loss = loss_sum * scale;
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step as u64 + 1, loss: mean_loss });
        }
        for g in grad.iter_mut() {
            *g *= scale;
        }

        if let Some(clip) = self.config.grad_clip {
            let norm: f64 = grad
                .iter()
                .zip(&self.trainable)
                .filter(|(_, &t)| t)
                .map(|(g, _)| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let s = clip / norm;
                for g in grad.iter_mut() {
                    *g *= s;
                }
            }
        }

        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let data = self.net.data_mut();
        for i in 0..data.len() {
            if !self.trainable[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            data[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.adam_eps) + c.weight_decay * data[i]);
        }
        Ok(mean_loss)
    }

    /// Runs `steps` updates, logging progress and optionally writing a
    /// checkpoint every `checkpoint_every` steps into `checkpoint_dir`.
    pub fn fit(
        &mut self,
        dataset: &Dataset,
        steps: usize,
        checkpoint_dir: Option<&Path>,
        checkpoint_every: Option<usize>,
    ) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(steps);
        let start = Instant::now();
        for i in 0..steps {
            let loss = self.train_step(dataset)?;
            losses.push(loss);
            if self.config.log_every > 0 && (i + 1) % self.config.log_every == 0 {
                let rate = (i + 1) as f64 / start.elapsed().as_secs_f64();
                eprintln!("step {} loss {loss:.6} ({rate:.1} steps/s)", self.step);
            }
            if let (Some(dir), Some(every)) = (checkpoint_dir, checkpoint_every) {
                if every > 0 && self.step % every == 0 {
                    self.save(&dir.join(format!("step-{:06}.ckpt", self.step)))?;
                }
            }
        }
        Ok(losses)
    }

    /// Starts a new trainer from an existing network's weights: fresh
    /// optimizer state, new spec and freeze policy.
    pub fn warm_start(
        net: PriorNet,
        schedule: NoiseSchedule,
        spec: OperatorSpec,
        policy: FreezePolicy,
        config: TrainConfig,
    ) -> Result<Self> {
        Self::new(net, schedule, spec, policy, config)
    }

    // -- checkpointing ---------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            prior: self.net.config().clone(),
            schedule_kind: self.schedule.kind(),
            schedule_steps: self.schedule.steps(),
            spec: self.spec.clone(),
            policy: self.policy.clone(),
            train: self.config.clone(),
            step: self.step,
            rng: self.rng.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        f.write_all(CKPT_MAGIC).map_err(io)?;
        f.write_u64::<LittleEndian>(header_bytes.len() as u64).map_err(io)?;
        f.write_all(&header_bytes).map_err(io)?;
        for blob in [self.net.data(), &self.m, &self.v] {
            f.write_u64::<LittleEndian>(blob.len() as u64).map_err(io)?;
            for &x in blob {
                f.write_f64::<LittleEndian>(x).map_err(io)?;
            }
        }
        f.flush().map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut blobs) = read_checkpoint(path)?;
        let v = blobs.pop().unwrap();
        let m = blobs.pop().unwrap();
        let params = blobs.pop().unwrap();
        let net = PriorNet::from_flat(&header.prior, params)?;
        let schedule = NoiseSchedule::new(header.schedule_kind, header.schedule_steps);
        let mask = freeze_policy(&net, &header.policy)?;
        let trainable = expand_mask(&net, &mask);
        Ok(Trainer {
            net,
            schedule,
            spec: header.spec,
            policy: header.policy,
            config: header.train,
            trainable,
            m,
            v,
            step: header.step,
            rng: header.rng,
        })
    }
}

const CKPT_MAGIC: &[u8; 8] = b"POPSCKPT";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    prior: PriorConfig,
    schedule_kind: ScheduleKind,
    schedule_steps: usize,
    spec: OperatorSpec,
    policy: FreezePolicy,
    train: TrainConfig,
    step: usize,
    rng: ChaCha8Rng,
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.display().to_string()));
    }
    let mut f =
        std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "POPSCKPT",
        });
    }
    let hlen = f.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut hbytes = vec![0u8; hlen];
    f.read_exact(&mut hbytes).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&hbytes)?;
    let mut blobs = Vec::with_capacity(3);
    for _ in 0..3 {
        let len = f.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut blob = Vec::with_capacity(len);
        for _ in 0..len {
            blob.push(f.read_f64::<LittleEndian>().map_err(io)?);
        }
        blobs.push(blob);
    }
    Ok((header, blobs))
}

/// Loads only the network weights from a checkpoint, for sampling and
/// warm starts.
pub fn load_net(path: &Path) -> Result<(PriorNet, OperatorSpec, NoiseSchedule)> {
    let (header, mut blobs) = read_checkpoint(path)?;
    let params = blobs.swap_remove(0);
    let net = PriorNet::from_flat(&header.prior, params)?;
    let schedule = NoiseSchedule::new(header.schedule_kind, header.schedule_steps);
    Ok((net, header.spec, schedule))
}
