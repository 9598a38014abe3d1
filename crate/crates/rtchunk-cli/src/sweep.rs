use crate::continuity::continuity_metric;
use crate::wilson::{wilson_interval, Z95};
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rtchunk_core::envkit::{Env, EnvConfig};
use rtchunk_core::executor::{run_episode, DelayConfig, PolicyHandle, Strategy};
use rtchunk_core::guidance::GuidanceConfig;
use rtchunk_core::trainer::Checkpoint;

/// How the execution horizon is chosen for each delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SRule {
    Fixed(usize),
    /// s = max(d, 1).
    MaxD1,
}

impl SRule {
    pub fn exec_horizon(&self, delay: usize) -> usize {
        match self {
            SRule::Fixed(s) => *s,
            SRule::MaxD1 => delay.max(1),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text == "max_d_1" {
            Ok(SRule::MaxD1)
        } else {
            let s: usize = text
                .parse()
                .with_context(|| format!("s rule must be `max_d_1` or an integer, got `{text}`"))?;
            Ok(SRule::Fixed(s))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub delays: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub n_rollouts: usize,
    pub s_rule: SRule,
    pub horizon: usize,
    pub num_steps: usize,
    pub seed_base: u64,
    pub max_ticks: usize,
    pub guidance: GuidanceConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            delays: vec![0, 1, 2, 3, 4],
            strategies: Strategy::all().to_vec(),
            n_rollouts: 512,
            s_rule: SRule::MaxD1,
            horizon: 8,
            num_steps: 10,
            seed_base: 0,
            max_ticks: 140,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl SweepSpec {
    /// Reject the whole spec up front, listing every offending cell.
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 {
            bail!("n_rollouts must be at least 1");
        }
        if self.delays.is_empty() || self.strategies.is_empty() {
            bail!("sweep needs at least one delay and one strategy");
        }
        let mut offenders = Vec::new();
        for &d in &self.delays {
            let s = self.s_rule.exec_horizon(d);
            if s == 0 || s > self.horizon || d + s > self.horizon {
                offenders.push(format!("(d={}, s={}, H={})", d, s, self.horizon));
            } else if d > s {
                offenders.push(format!("(d={} > s={})", d, s));
            }
        }
        if !offenders.is_empty() {
            bail!("invalid sweep cells: {}", offenders.join(", "));
        }
        Ok(())
    }
}

/// One (strategy, delay) aggregate; one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub strategy: Strategy,
    pub delay: usize,
    pub exec_horizon: usize,
    pub n: u64,
    pub successes: u64,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub mean_ticks: f64,
    pub sem_ticks: f64,
    pub mean_switch_jump: f64,
    pub mean_within_jump: f64,
    /// Mean forward/vjp passes per steady-state chunk.
    pub fwd_passes: f64,
    pub vjp_passes: f64,
    pub seed_base: u64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn cell(&self, strategy: Strategy, delay: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.strategy == strategy && c.delay == delay)
    }
}

/// Both checkpoint families, one per strategy side.
pub struct CheckpointPair<'a> {
    pub unconditioned: &'a Checkpoint,
    pub conditioned: &'a Checkpoint,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Episode seeds depend on (seed_base, d, episode index) but not on the
/// strategy, so strategies can be compared trajectory-for-trajectory.
pub fn episode_seed(seed_base: u64, delay: usize, episode: usize) -> u64 {
    splitmix64(seed_base ^ splitmix64(((delay as u64) << 32) | episode as u64))
}

/// Validate that each strategy gets a checkpoint of the right family.
/// Training-time RTC normally requires the conditioned checkpoint; when
/// every swept delay is 0 it may share the unconditioned one (no prefix
/// conditioning happens at d = 0).
fn check_families(spec: &SweepSpec, ckpts: &CheckpointPair) -> Result<()> {
    if ckpts.unconditioned.conditioned {
        bail!("the unconditioned slot holds a prefix-conditioned checkpoint");
    }
    let tt_needs_conditioning = spec.strategies.contains(&Strategy::TrainingTimeRtc)
        && spec.delays.iter().any(|d| *d > 0);
    if tt_needs_conditioning && !ckpts.conditioned.conditioned {
        bail!("training-time RTC at d > 0 requires a prefix-conditioned checkpoint");
    }
    Ok(())
}

/// Run every (strategy, delay) cell. Episodes are seed-partitioned, so
/// the result is a pure function of the spec and checkpoints.
pub fn sweep(spec: &SweepSpec, ckpts: &CheckpointPair, env_cfg: &EnvConfig) -> Result<SweepResult> {
    spec.validate()?;
    check_families(spec, ckpts)?;
    let env = Env::new(env_cfg.clone());

    let mut cells = Vec::new();
    for &strategy in &spec.strategies {
        for &delay in &spec.delays {
            let s = spec.s_rule.exec_horizon(delay);
            let cfg = DelayConfig::new(spec.horizon, s, delay)
                .map_err(|e| anyhow::anyhow!("cell (d={}, s={}): {}", delay, s, e))?;
            let ckpt = match strategy {
                Strategy::TrainingTimeRtc => ckpts.conditioned,
                _ => ckpts.unconditioned,
            };

            let records: Vec<_> = (0..spec.n_rollouts)
                .into_par_iter()
                .map(|episode| {
                    let handle = PolicyHandle::new(
                        &ckpt.params,
                        &ckpt.stats,
                        ckpt.conditioned,
                        spec.num_steps,
                        spec.guidance.clone(),
                    );
                    let seed = episode_seed(spec.seed_base, delay, episode);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    run_episode(strategy, &handle, &env, &cfg, &mut rng, spec.max_ticks)
                })
                .collect::<rtchunk_core::Result<Vec<_>>>()
                .map_err(|e| anyhow::anyhow!("cell ({}, d={}): {}", strategy.label(), delay, e))?;

            let n = records.len() as u64;
            let successes = records.iter().filter(|r| r.success).count() as u64;
            let (wilson_lo, wilson_hi) = wilson_interval(successes, n, Z95)?;
            let mean_ticks =
                records.iter().map(|r| r.ticks as f64).sum::<f64>() / n as f64;
            let var_ticks = records
                .iter()
                .map(|r| (r.ticks as f64 - mean_ticks).powi(2))
                .sum::<f64>()
                / n as f64;
            let sem_ticks = (var_ticks / n as f64).sqrt();

            let mut switch_sum = 0.0;
            let mut within_sum = 0.0;
            let mut jump_eps = 0usize;
            for r in &records {
                if r.switch_ticks.is_empty() {
                    continue;
                }
                let m = continuity_metric(r)?;
                switch_sum += m.mean_jump_at_switch;
                within_sum += m.mean_jump_within_chunk;
                jump_eps += 1;
            }
            let (mean_switch_jump, mean_within_jump) = if jump_eps > 0 {
                (switch_sum / jump_eps as f64, within_sum / jump_eps as f64)
            } else {
                (0.0, 0.0)
            };

            let total_chunks: u64 = records.iter().map(|r| r.steady_chunks).sum();
            let (fwd_passes, vjp_passes) = if total_chunks > 0 {
                (
                    records.iter().map(|r| r.forward_passes).sum::<u64>() as f64
                        / total_chunks as f64,
                    records.iter().map(|r| r.vjp_passes).sum::<u64>() as f64
                        / total_chunks as f64,
                )
            } else {
                (0.0, 0.0)
            };

            cells.push(CellResult {
                strategy,
                delay,
                exec_horizon: s,
                n,
                successes,
                rate: successes as f64 / n as f64,
                wilson_lo,
                wilson_hi,
                mean_ticks,
                sem_ticks,
                mean_switch_jump,
                mean_within_jump,
                fwd_passes,
                vjp_passes,
                seed_base: spec.seed_base,
            });
        }
    }
    Ok(SweepResult { cells })
}
