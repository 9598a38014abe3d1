use super::checkpoint::{Checkpoint, TrainMeta};
use super::delay::DelayDistribution;
use crate::envkit::Dataset;
use crate::error::{Error, Result};
use crate::flowpolicy::{prefix_loss_traced, ActionChunk, Observation, PolicyDescriptor, PolicyParams};
use crate::ndcore::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Everything `train` needs. Loadable from a TOML document with the same
/// field names; `warm_start_path` is resolved by the caller (the CLI loads
/// the checkpoint and passes it in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub learning_rate_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub conditioned: bool,
    pub delay_dist: Option<DelayDistribution>,
    pub warm_start_path: Option<String>,
    /// Clone of the parameters at the end of this epoch (1-based), for
    /// matched-compute fine-tuning protocols.
    pub snapshot_epoch: Option<usize>,
    pub width: usize,
    pub depth: usize,
    pub token_mixing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 32,
            batch_size: 64,
            learning_rate: 3e-3,
            learning_rate_min: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            conditioned: false,
            delay_dist: None,
            warm_start_path: None,
            snapshot_epoch: None,
            width: 64,
            depth: 2,
            token_mixing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.conditioned {
            match &self.delay_dist {
                None => {
                    return Err(Error::Config(
                        "conditioned training requires a delay distribution".into(),
                    ))
                }
                Some(d) => d.validate()?,
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("bad train config: {}", e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("train config serializes")
    }
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Fixed-seed evaluation loss before training and after each epoch
    /// (`epochs + 1` entries, up to [`EVAL_SUBSET`] samples per pass).
    /// The draws are frozen once per run, so the curve is a deterministic
    /// function of the parameter trajectory rather than of fresh sampling
    /// noise.
    pub loss_curve: Vec<f64>,
    /// Parameters captured at `snapshot_epoch`, when requested.
    pub snapshot: Option<Checkpoint>,
}

/// Upper bound on how many samples the per-epoch evaluation pass uses.
pub const EVAL_SUBSET: usize = 1024;

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &PolicyParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn apply(&mut self, params: &mut PolicyParams, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (ti, tensor) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[ti].data();
            let m = self.m[ti].data_mut();
            let v = self.v[ti].data_mut();
            let p = tensor.data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

fn cosine_lr(cfg: &TrainConfig, step: u64, total: u64) -> f64 {
    if total <= 1 {
        return cfg.learning_rate;
    }
    let progress = step as f64 / (total - 1) as f64;
    cfg.learning_rate_min
        + 0.5 * (cfg.learning_rate - cfg.learning_rate_min)
            * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Train a policy on the dataset.
///
/// Per-sample randomness is split into independent streams (one for the
/// loss draws, one for the delay draw) derived from the master seed in
/// sample order, so results do not depend on how the batch is sharded
/// across threads, and an unconditioned run consumes exactly the same
/// master stream as a conditioned run whose distribution is pinned at 0.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    warm_start: Option<&Checkpoint>,
) -> Result<TrainOutput> {
    config.validate()?;
    if dataset.num_samples() == 0 {
        return Err(Error::Dataset("training dataset is empty".into()));
    }
    let desc = PolicyDescriptor {
        obs_dim: dataset.obs_dim,
        action_dim: dataset.action_dim,
        horizon: dataset.horizon,
        width: config.width,
        depth: config.depth,
        token_mixing: config.token_mixing,
    };

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut params, stats, parent_steps, parent_epochs) = match warm_start {
        Some(ckpt) => {
            if ckpt.params.desc != desc {
                return Err(Error::Config(format!(
                    "warm-start descriptor {:?} does not match configured {:?}",
                    ckpt.params.desc, desc
                )));
            }
            // Keep the parent's normalization so the inherited weights
            // keep their meaning.
            (
                ckpt.params.clone(),
                ckpt.stats.clone(),
                ckpt.meta.gradient_steps,
                ckpt.meta.epochs_seen,
            )
        }
        None => {
            let params = PolicyParams::init(desc, &mut master)?;
            (params, dataset.stats.clone(), 0, 0)
        }
    };

    // Normalized training pairs, flattened across episodes.
    let samples: Vec<(&Observation, ActionChunk)> = dataset
        .samples()
        .map(|(obs, chunk)| Ok((obs, stats.normalize_chunk(chunk)?)))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len();

    let steps_per_epoch = n.div_ceil(config.batch_size) as u64;
    let total_steps = steps_per_epoch * config.epochs as u64;
    let mut opt = Adam::new(&params, config);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut snapshot = None;

    // Fixed evaluation plan: a subset of samples with frozen draws, shared
    // by every epoch, so curve entries are comparable.
    let mut eval_master = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut eval_indices: Vec<usize> = (0..n).collect();
    eval_indices.shuffle(&mut eval_master);
    eval_indices.truncate(EVAL_SUBSET.min(n));
    let eval_seeds: Vec<(u64, u64)> =
        eval_indices.iter().map(|_| (eval_master.gen::<u64>(), eval_master.gen::<u64>())).collect();
    loss_curve.push(fixed_eval(&params, &samples, &eval_indices, &eval_seeds, config)?);

    for epoch in 0..config.epochs {
        order.shuffle(&mut master);
        let mut epoch_batches = 0usize;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            // Per-sample seeds drawn in batch order from the master stream.
            let seeds: Vec<(u64, u64)> =
                batch.iter().map(|_| (master.gen::<u64>(), master.gen::<u64>())).collect();

            let per_sample: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .zip(per_sample_iter(&seeds))
                .map(|(idx, (loss_seed, delay_seed))| {
                    let (obs, chunk) = &samples[*idx];
                    let delay = if config.conditioned {
                        let dist = config.delay_dist.as_ref().expect("validated");
                        let mut drng = ChaCha8Rng::seed_from_u64(delay_seed);
                        dist.sample(&mut drng)
                    } else {
                        0
                    };
                    let mut lrng = ChaCha8Rng::seed_from_u64(loss_seed);
                    let grads =
                        prefix_loss_traced(&params, obs, chunk, delay, &mut lrng)?.into_grads()?;
                    Ok((grads.loss, grads.grads))
                })
                .collect();

            // Fixed-order reduction over the batch.
            let mut batch_loss = 0.0;
            let mut acc: Option<Vec<Tensor>> = None;
            for item in per_sample {
                let (loss, grads) = item?;
                batch_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            let ad = a.data_mut();
                            for (x, y) in ad.iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became non-finite at epoch {} batch {}",
                    epoch, batch_idx
                )));
            }
            let lr = cosine_lr(config, opt.step, total_steps);
            opt.apply(&mut params, &grads, lr);
            epoch_batches += 1;
        }
        debug_assert!(epoch_batches as u64 == steps_per_epoch);

        let eval = fixed_eval(&params, &samples, &eval_indices, &eval_seeds, config)?;
        if !eval.is_finite() {
            return Err(Error::Numeric(format!(
                "evaluation loss became non-finite after epoch {}",
                epoch
            )));
        }
        loss_curve.push(eval);
        if config.snapshot_epoch == Some(epoch + 1) {
            snapshot = Some(Checkpoint {
                params: params.clone(),
                stats: stats.clone(),
                conditioned: config.conditioned,
                meta: TrainMeta {
                    epochs_seen: parent_epochs + (epoch + 1) as u64,
                    gradient_steps: parent_steps + opt.step,
                    seed: config.seed,
                    delay_dist: config.delay_dist.clone(),
                },
            });
        }
    }

    let checkpoint = Checkpoint {
        params,
        stats,
        conditioned: config.conditioned,
        meta: TrainMeta {
            epochs_seen: parent_epochs + config.epochs as u64,
            gradient_steps: parent_steps + opt.step,
            seed: config.seed,
            delay_dist: config.delay_dist.clone(),
        },
    };
    Ok(TrainOutput { checkpoint, loss_curve, snapshot })
}

fn per_sample_iter(seeds: &[(u64, u64)]) -> impl IndexedParallelIterator<Item = (u64, u64)> + '_ {
    seeds.par_iter().copied()
}

fn fixed_eval(
    params: &PolicyParams,
    samples: &[(&Observation, ActionChunk)],
    indices: &[usize],
    seeds: &[(u64, u64)],
    config: &TrainConfig,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = indices
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(idx, (loss_seed, delay_seed))| {
            let (obs, chunk) = &samples[*idx];
            let delay = if config.conditioned {
                let dist = config.delay_dist.as_ref().expect("validated");
                let mut drng = ChaCha8Rng::seed_from_u64(*delay_seed);
                dist.sample(&mut drng)
            } else {
                0
            };
            let mut lrng = ChaCha8Rng::seed_from_u64(*loss_seed);
            crate::flowpolicy::prefix_loss(params, obs, chunk, delay, &mut lrng)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / indices.len() as f64)
}

/// Mean loss of a fixed evaluation pass over the dataset, using one
/// deterministic seed per sample. No parameters are updated.
pub fn eval_loss(
    params: &PolicyParams,
    stats: &crate::envkit::NormStats,
    dataset: &Dataset,
    delay: usize,
    seed: u64,
) -> Result<f64> {
    let samples: Vec<(&Observation, ActionChunk)> = dataset
        .samples()
        .map(|(obs, chunk)| Ok((obs, stats.normalize_chunk(chunk)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..samples.len()).map(|_| master.gen()).collect();
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .zip(seeds.par_iter())
        .map(|((obs, chunk), s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(*s);
            crate::flowpolicy::prefix_loss(params, obs, chunk, delay, &mut rng)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}
