//! Simulated real-time execution in controller ticks.
//!
//! Asynchrony is modeled logically: generating a chunk is instantaneous in
//! wall time but the result is parked in a pending slot until its arrival
//! tick. A chunk launched at tick L with delay d covers ticks [L, L+H);
//! its first d rows are never executed from it (they belong to the chunk
//! still running) and execution starts at row d when it arrives at L+d.

use crate::envkit::{Env, EnvState, NormStats, Status};
use crate::error::{Error, Result};
use crate::flowpolicy::{self, ActionChunk, Observation, PolicyParams};
use crate::guidance::{self, GuidanceConfig, OverlapTarget};
use crate::ndcore::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Horizon geometry: predict H, execute s per chunk, d ticks of inference
/// delay. A valid prefix needs d <= H - s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayConfig {
    pub horizon: usize,
    pub exec_horizon: usize,
    pub delay: usize,
}

impl DelayConfig {
    pub fn new(horizon: usize, exec_horizon: usize, delay: usize) -> Result<Self> {
        let cfg = DelayConfig { horizon, exec_horizon, delay };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.exec_horizon == 0 || self.exec_horizon > self.horizon {
            return Err(Error::Domain(format!(
                "execution horizon must satisfy 1 <= s <= H, got s {} H {}",
                self.exec_horizon, self.horizon
            )));
        }
        if self.delay > self.horizon - self.exec_horizon {
            return Err(Error::Domain(format!(
                "delay must satisfy d <= H - s, got d {} H {} s {}",
                self.delay, self.horizon, self.exec_horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Pause for d ticks at every chunk boundary, holding the last action.
    Synchronous,
    /// Launch inference s - d ticks into the current chunk; no conditioning.
    NaiveAsync,
    /// Asynchronous with inpainting guidance over the chunk overlap.
    InferenceTimeRtc,
    /// Asynchronous with a prefix-conditioned checkpoint.
    TrainingTimeRtc,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Synchronous => "synchronous",
            Strategy::NaiveAsync => "naive_async",
            Strategy::InferenceTimeRtc => "inference_time_rtc",
            Strategy::TrainingTimeRtc => "training_time_rtc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synchronous" => Ok(Strategy::Synchronous),
            "naive_async" => Ok(Strategy::NaiveAsync),
            "inference_time_rtc" => Ok(Strategy::InferenceTimeRtc),
            "training_time_rtc" => Ok(Strategy::TrainingTimeRtc),
            other => Err(Error::Config(format!("unknown strategy `{}`", other))),
        }
    }

    pub fn all() -> [Strategy; 4] {
        [
            Strategy::Synchronous,
            Strategy::NaiveAsync,
            Strategy::InferenceTimeRtc,
            Strategy::TrainingTimeRtc,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub forward_passes: u64,
    pub vjp_passes: u64,
}

/// Chunk generator abstraction so rollouts can run either a learned policy
/// or a scripted oracle.
pub trait ChunkSource {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Whether the underlying checkpoint was trained with prefix
    /// conditioning.
    fn conditioned(&self) -> bool;
    fn sample<R: Rng>(&self, obs: &Observation, rng: &mut R) -> Result<(ActionChunk, OpCount)>;
    fn sample_with_prefix<R: Rng>(
        &self,
        obs: &Observation,
        prefix: &Tensor,
        delay: usize,
        rng: &mut R,
    ) -> Result<(ActionChunk, OpCount)>;
    fn sample_guided<R: Rng>(
        &self,
        obs: &Observation,
        target: &OverlapTarget,
        rng: &mut R,
    ) -> Result<(ActionChunk, OpCount)>;
}

/// A trained checkpoint bundled with its normalization statistics and
/// sampling settings, speaking environment units on the outside and
/// normalized units toward the policy.
pub struct PolicyHandle<'a> {
    pub params: &'a PolicyParams,
    pub stats: &'a NormStats,
    pub conditioned: bool,
    pub num_steps: usize,
    pub guidance: GuidanceConfig,
}

impl<'a> PolicyHandle<'a> {
    pub fn new(
        params: &'a PolicyParams,
        stats: &'a NormStats,
        conditioned: bool,
        num_steps: usize,
        mut guidance: GuidanceConfig,
    ) -> Self {
        guidance.num_steps = num_steps;
        PolicyHandle { params, stats, conditioned, num_steps, guidance }
    }

    fn denormalize(&self, chunk: &ActionChunk) -> Result<ActionChunk> {
        self.stats.denormalize_chunk(chunk)
    }
}

impl ChunkSource for PolicyHandle<'_> {
    fn horizon(&self) -> usize {
        self.params.desc.horizon
    }

    fn action_dim(&self) -> usize {
        self.params.desc.action_dim
    }

    fn conditioned(&self) -> bool {
        self.conditioned
    }

    fn sample<R: Rng>(&self, obs: &Observation, rng: &mut R) -> Result<(ActionChunk, OpCount)> {
        let chunk = flowpolicy::sample(self.params, obs, self.num_steps, rng)?;
        Ok((
            self.denormalize(&chunk)?,
            OpCount { forward_passes: self.num_steps as u64, vjp_passes: 0 },
        ))
    }

    fn sample_with_prefix<R: Rng>(
        &self,
        obs: &Observation,
        prefix: &Tensor,
        delay: usize,
        rng: &mut R,
    ) -> Result<(ActionChunk, OpCount)> {
        let (h, a) = prefix.dims2()?;
        let mut norm = vec![0.0; h * a];
        for i in 0..delay {
            self.stats.normalize_row(prefix.row(i)?, &mut norm[i * a..(i + 1) * a]);
        }
        let norm_prefix = Tensor::from_vec(vec![h, a], norm)?;
        let chunk =
            flowpolicy::sample_with_prefix(self.params, obs, &norm_prefix, delay, self.num_steps, rng)?;
        let mut out = self.denormalize(&chunk)?;
        // Return the caller's prefix rows verbatim rather than through the
        // normalization round trip.
        out = overwrite_rows(&out, prefix, delay)?;
        Ok((out, OpCount { forward_passes: self.num_steps as u64, vjp_passes: 0 }))
    }

    fn sample_guided<R: Rng>(
        &self,
        obs: &Observation,
        target: &OverlapTarget,
        rng: &mut R,
    ) -> Result<(ActionChunk, OpCount)> {
        let (h, a) = target.y.dims2()?;
        let mut norm = vec![0.0; h * a];
        for i in 0..h - target.exec_horizon {
            self.stats.normalize_row(target.y.row(i)?, &mut norm[i * a..(i + 1) * a]);
        }
        let norm_target = OverlapTarget::new(
            Tensor::from_vec(vec![h, a], norm)?,
            target.delay,
            target.exec_horizon,
        )?;
        let chunk = guidance::guided_sample(self.params, obs, &norm_target, &self.guidance, rng)?;
        let mut out = self.denormalize(&chunk)?;
        out = overwrite_rows(&out, &target.y, target.delay)?;
        Ok((
            out,
            OpCount {
                forward_passes: self.num_steps as u64,
                vjp_passes: self.num_steps as u64,
            },
        ))
    }
}

fn overwrite_rows(chunk: &ActionChunk, src: &Tensor, rows: usize) -> Result<ActionChunk> {
    if rows == 0 {
        return Ok(chunk.clone());
    }
    let (h, a) = chunk.as_tensor().dims2()?;
    let mut data = chunk.as_tensor().data().to_vec();
    for i in 0..rows {
        data[i * a..(i + 1) * a].copy_from_slice(src.row(i)?);
    }
    ActionChunk::new(Tensor::from_vec(vec![h, a], data)?)
}

/// Rows [offset, offset + d) of the previous chunk, placed at rows [0, d)
/// of an H-padded buffer.
pub fn extract_prefix(prev: &ActionChunk, offset: usize, delay: usize) -> Result<Tensor> {
    let (h, a) = prev.as_tensor().dims2()?;
    if offset + delay > h {
        return Err(Error::Domain(format!(
            "prefix rows [{}, {}) exceed horizon {}",
            offset,
            offset + delay,
            h
        )));
    }
    let mut data = vec![0.0; h * a];
    for i in 0..delay {
        data[i * a..(i + 1) * a].copy_from_slice(prev.row(offset + i));
    }
    Ok(Tensor::from_vec(vec![h, a], data)?)
}

/// Overlap rows for guided inpainting: rows [0, H - s) of the result hold
/// previous-chunk rows [offset, offset + H - s). In steady state chunks are
/// requested one execution horizon apart, so offset = s.
pub fn build_overlap_target(
    prev: &ActionChunk,
    offset: usize,
    delay: usize,
    exec_horizon: usize,
) -> Result<OverlapTarget> {
    let (h, a) = prev.as_tensor().dims2()?;
    let overlap = h
        .checked_sub(exec_horizon)
        .ok_or_else(|| Error::Domain("execution horizon exceeds prediction horizon".into()))?;
    if offset + overlap > h {
        return Err(Error::Domain(format!(
            "overlap rows [{}, {}) exceed horizon {}",
            offset,
            offset + overlap,
            h
        )));
    }
    let mut data = vec![0.0; h * a];
    for i in 0..overlap {
        data[i * a..(i + 1) * a].copy_from_slice(prev.row(offset + i));
    }
    OverlapTarget::new(Tensor::from_vec(vec![h, a], data)?, delay, exec_horizon)
}

/// Everything observable about one episode.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub states: Vec<EnvState>,
    pub executed: Vec<[f64; 2]>,
    pub switch_ticks: Vec<usize>,
    /// Per generated chunk: (observation tick, first executed tick).
    pub chunk_timing: Vec<(usize, usize)>,
    pub success: bool,
    pub ticks: usize,
    pub max_interchunk_jump: f64,
    /// Op counts over steady-state chunks (the first, fresh-start chunk is
    /// excluded; its cost is one plain sample for every strategy).
    pub forward_passes: u64,
    pub vjp_passes: u64,
    pub steady_chunks: u64,
}

impl RolloutRecord {
    fn finish(mut self) -> Self {
        let mut max_jump: f64 = 0.0;
        for &t in &self.switch_ticks {
            if t >= 1 && t < self.executed.len() {
                let a = self.executed[t - 1];
                let b = self.executed[t];
                max_jump = max_jump.max(((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt());
            }
        }
        self.max_interchunk_jump = max_jump;
        self.ticks = self.executed.len();
        self
    }
}

fn check_compat<P: ChunkSource>(strategy: Strategy, policy: &P, cfg: &DelayConfig) -> Result<()> {
    match strategy {
        Strategy::TrainingTimeRtc => {
            if cfg.delay > 0 && !policy.conditioned() {
                return Err(Error::Config(
                    "training-time RTC with d > 0 requires a prefix-conditioned checkpoint"
                        .into(),
                ));
            }
        }
        Strategy::Synchronous | Strategy::NaiveAsync | Strategy::InferenceTimeRtc => {
            if policy.conditioned() {
                return Err(Error::Config(format!(
                    "{} requires an unconditioned checkpoint",
                    strategy.label()
                )));
            }
        }
    }
    Ok(())
}

/// Run one episode of the given strategy.
///
/// The first chunk of every episode is sampled unconditioned from the
/// initial observation while the environment holds its initial state, so
/// no strategy pays a delay penalty at episode start.
pub fn run_episode<P: ChunkSource, R: Rng>(
    strategy: Strategy,
    policy: &P,
    env: &Env,
    cfg: &DelayConfig,
    rng: &mut R,
    max_ticks: usize,
) -> Result<RolloutRecord> {
    cfg.validate()?;
    check_compat(strategy, policy, cfg)?;
    if policy.horizon() != cfg.horizon {
        return Err(Error::Config(format!(
            "policy horizon {} does not match configured horizon {}",
            policy.horizon(),
            cfg.horizon
        )));
    }
    match strategy {
        Strategy::Synchronous => run_synchronous(policy, env, cfg, rng, max_ticks),
        Strategy::NaiveAsync | Strategy::InferenceTimeRtc | Strategy::TrainingTimeRtc => {
            if cfg.delay > cfg.exec_horizon {
                return Err(Error::Config(format!(
                    "asynchronous execution needs d <= s (one inference in flight), got d {} s {}",
                    cfg.delay, cfg.exec_horizon
                )));
            }
            run_async(strategy, policy, env, cfg, rng, max_ticks)
        }
    }
}

fn run_synchronous<P: ChunkSource, R: Rng>(
    policy: &P,
    env: &Env,
    cfg: &DelayConfig,
    rng: &mut R,
    max_ticks: usize,
) -> Result<RolloutRecord> {
    let s = cfg.exec_horizon;
    let d = cfg.delay;
    let mut state = env.init_state(rng);
    let mut rec = RolloutRecord {
        states: vec![state.clone()],
        executed: Vec::new(),
        switch_ticks: Vec::new(),
        chunk_timing: Vec::new(),
        success: false,
        ticks: 0,
        max_interchunk_jump: 0.0,
        forward_passes: 0,
        vjp_passes: 0,
        steady_chunks: 0,
    };

    let mut first = true;
    'episode: loop {
        let boundary_tick = rec.executed.len();
        let obs = env.observe(&state);
        let (chunk, cost) = policy.sample(&obs, rng)?;
        if !first {
            rec.forward_passes += cost.forward_passes;
            rec.vjp_passes += cost.vjp_passes;
            rec.steady_chunks += 1;
            // Inference pause: hold the last executed action while the
            // scene keeps moving.
            let held = *rec.executed.last().expect("pause only after first chunk");
            for _ in 0..d {
                state = env.step(&state, held);
                rec.executed.push(held);
                rec.states.push(state.clone());
                match env.status(&state) {
                    Status::Success => {
                        rec.success = true;
                        break 'episode;
                    }
                    Status::Failure => break 'episode,
                    Status::Running => {}
                }
                if rec.executed.len() >= max_ticks {
                    break 'episode;
                }
            }
            rec.switch_ticks.push(rec.executed.len());
        }
        rec.chunk_timing.push((boundary_tick, rec.executed.len()));
        first = false;

        for row in 0..s {
            let action = clip_action(chunk.row(row));
            state = env.step(&state, action);
            rec.executed.push(action);
            rec.states.push(state.clone());
            match env.status(&state) {
                Status::Success => {
                    rec.success = true;
                    break 'episode;
                }
                Status::Failure => break 'episode,
                Status::Running => {}
            }
            if rec.executed.len() >= max_ticks {
                break 'episode;
            }
        }
    }
    Ok(rec.finish())
}

fn run_async<P: ChunkSource, R: Rng>(
    strategy: Strategy,
    policy: &P,
    env: &Env,
    cfg: &DelayConfig,
    rng: &mut R,
    max_ticks: usize,
) -> Result<RolloutRecord> {
    let s = cfg.exec_horizon;
    let d = cfg.delay;
    let mut state = env.init_state(rng);
    let mut rec = RolloutRecord {
        states: vec![state.clone()],
        executed: Vec::new(),
        switch_ticks: Vec::new(),
        chunk_timing: Vec::new(),
        success: false,
        ticks: 0,
        max_interchunk_jump: 0.0,
        forward_passes: 0,
        vjp_passes: 0,
        steady_chunks: 0,
    };

    // Fresh start: the environment is held at its initial state until the
    // first chunk is ready.
    let obs0 = env.observe(&state);
    let (chunk0, _) = policy.sample(&obs0, rng)?;
    rec.chunk_timing.push((0, 0));
    let mut current = chunk0;
    let mut current_row0: i64 = 0;
    let mut pending: Option<(ActionChunk, usize, usize)> = None; // chunk, row0 tick, arrival
    let mut next_switch = s;

    let mut t = 0usize;
    'episode: loop {
        // Arrivals and launches, repeated until quiescent so that the
        // d = 0 (launch then immediate arrival) and d = s (arrival then
        // immediate launch) corners both sequence correctly.
        loop {
            let mut acted = false;
            if let Some((_, _, arrival)) = &pending {
                if *arrival == t {
                    let (chunk, row0, _) = pending.take().expect("pending checked");
                    current = chunk;
                    current_row0 = row0 as i64;
                    rec.switch_ticks.push(t);
                    next_switch += s;
                    acted = true;
                }
            }
            let next_launch = next_switch - d;
            if pending.is_none() && t == next_launch {
                let obs = env.observe(&state);
                let launch_row0 = next_launch;
                let offset = (launch_row0 as i64 - current_row0) as usize;
                let (chunk, cost) = match strategy {
                    Strategy::NaiveAsync => policy.sample(&obs, rng)?,
                    Strategy::TrainingTimeRtc => {
                        let prefix = extract_prefix(&current, offset, d)?;
                        policy.sample_with_prefix(&obs, &prefix, d, rng)?
                    }
                    Strategy::InferenceTimeRtc => {
                        let target = build_overlap_target(&current, offset, d, s)?;
                        policy.sample_guided(&obs, &target, rng)?
                    }
                    Strategy::Synchronous => unreachable!("handled in run_synchronous"),
                };
                rec.forward_passes += cost.forward_passes;
                rec.vjp_passes += cost.vjp_passes;
                rec.steady_chunks += 1;
                rec.chunk_timing.push((t, next_switch));
                pending = Some((chunk, launch_row0, next_switch));
                acted = true;
            }
            if !acted {
                break;
            }
        }

        let row = (t as i64 - current_row0) as usize;
        debug_assert!(row < cfg.horizon, "executed row ran past the chunk");
        let action = clip_action(current.row(row));
        state = env.step(&state, action);
        rec.executed.push(action);
        rec.states.push(state.clone());
        t += 1;
        match env.status(&state) {
            Status::Success => {
                rec.success = true;
                break 'episode;
            }
            Status::Failure => break 'episode,
            Status::Running => {}
        }
        if t >= max_ticks {
            break 'episode;
        }
    }
    Ok(rec.finish())
}

fn clip_action(row: &[f64]) -> [f64; 2] {
    [row[0].clamp(-1.0, 1.0), row[1].clamp(-1.0, 1.0)]
}
