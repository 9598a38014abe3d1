//! Inference-time real-time chunking: inpainting-guided sampling.
//!
//! The sampler hard-overwrites prefix rows like the prefix-conditioned
//! sampler, and additionally nudges the velocity toward the previous
//! chunk's overlapping actions through a pseudoinverse-style correction:
//! each step forms the one-step denoised estimate `a1 = x + (1 - t) * v`,
//! weighs the residual against the overlap target with exponentially
//! decaying soft-mask weights, and pulls the residual back through the
//! model with a vector-Jacobian product.

use crate::error::{Error, Result};
use crate::flowpolicy::{ActionChunk, FlowState, NoiseSample, Observation, PolicyParams};
use crate::ndcore::{Tape, Tensor, Var};
use rand::Rng;

/// Knobs of the guided sampler. The schedule is a documented stand-in:
/// `gamma(t) = min(1 - t, gamma_max)` scales the correction `beta * vjp`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub beta: f64,
    pub decay_c: f64,
    pub gamma_max: f64,
    pub num_steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { beta: 1.0, decay_c: 0.5, gamma_max: 5.0, num_steps: 10 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::Config("guidance beta must be >= 0".into()));
        }
        if !(0.0 < self.decay_c && self.decay_c < 1.0) {
            return Err(Error::Config("decay_c must lie in (0, 1)".into()));
        }
        if self.gamma_max <= 0.0 {
            return Err(Error::Config("gamma_max must be positive".into()));
        }
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Previous-chunk actions at the rows that overlap the new chunk.
/// Rows `[0, H - s)` are meaningful; later rows are never read.
#[derive(Debug, Clone)]
pub struct OverlapTarget {
    pub y: Tensor,
    pub delay: usize,
    pub exec_horizon: usize,
}

impl OverlapTarget {
    pub fn new(y: Tensor, delay: usize, exec_horizon: usize) -> Result<Self> {
        let (h, _) = y.dims2()?;
        if exec_horizon > h || delay + exec_horizon > h {
            return Err(Error::Domain(format!(
                "overlap target needs delay {} <= H {} - s {}",
                delay, h, exec_horizon
            )));
        }
        for i in 0..h - exec_horizon {
            if y.row(i)?.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("overlap row {} is not finite", i)));
            }
        }
        Ok(OverlapTarget { y, delay, exec_horizon })
    }

    pub fn horizon(&self) -> usize {
        self.y.shape()[0]
    }
}

/// A velocity field that can be recorded on a tape and differentiated
/// with respect to its noisy-chunk input.
pub trait VelocityField {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn trace(&self, obs: &Observation, state: &FlowState) -> Result<FieldTrace>;
}

pub struct FieldTrace {
    pub tape: Tape,
    pub x_var: Var,
    pub output: Var,
}

impl VelocityField for PolicyParams {
    fn horizon(&self) -> usize {
        self.desc.horizon
    }

    fn action_dim(&self) -> usize {
        self.desc.action_dim
    }

    fn trace(&self, obs: &Observation, state: &FlowState) -> Result<FieldTrace> {
        let t = self.forward_traced(&obs.features, state)?;
        Ok(FieldTrace { tape: t.tape, x_var: t.x_var, output: t.output })
    }
}

/// Soft-mask weights over the chunk rows: 1 on the prefix, exponentially
/// decaying (`decay_c^(i - d + 1)`) across the remaining overlap, 0 at and
/// beyond row `H - s`.
pub fn soft_mask_weights(
    horizon: usize,
    delay: usize,
    exec_horizon: usize,
    decay_c: f64,
) -> Result<Vec<f64>> {
    if exec_horizon > horizon || delay > horizon - exec_horizon {
        return Err(Error::Domain(format!(
            "soft mask needs d {} <= H {} - s {}",
            delay, horizon, exec_horizon
        )));
    }
    if !(0.0 < decay_c && decay_c < 1.0) {
        return Err(Error::Domain("decay_c must lie in (0, 1)".into()));
    }
    let overlap_end = horizon - exec_horizon;
    Ok((0..horizon)
        .map(|i| {
            if i < delay {
                1.0
            } else if i < overlap_end {
                decay_c.powi((i - delay + 1) as i32)
            } else {
                0.0
            }
        })
        .collect())
}

/// Inpainting-guided Euler sampler.
///
/// Each step: overwrite rows `< d` with the target, evaluate the velocity,
/// form `a1 = x + (1 - t) * v` on the tape, backpropagate the soft-masked
/// residual `W (y - a1)`, and take the Euler step with
/// `v + gamma(t) * beta * vjp`. The correction is applied before the
/// overwrite of the next step, so rows `< d` of the returned chunk equal
/// the target rows exactly.
pub fn guided_sample<M: VelocityField, R: Rng>(
    model: &M,
    obs: &Observation,
    target: &OverlapTarget,
    cfg: &GuidanceConfig,
    rng: &mut R,
) -> Result<ActionChunk> {
    cfg.validate()?;
    let h = model.horizon();
    let a = model.action_dim();
    if target.horizon() != h {
        return Err(Error::Domain("overlap target horizon does not match the model".into()));
    }
    let delay = target.delay;
    let weights = soft_mask_weights(h, delay, target.exec_horizon, cfg.decay_c)?;

    let mut x = NoiseSample::draw(rng, h, a).eps.data().to_vec();
    let dt = 1.0 / cfg.num_steps as f64;

    for step in 0..cfg.num_steps {
        let t = step as f64 * dt;
        overwrite(&mut x, &target.y, delay, a);
        let times: Vec<f64> = (0..h).map(|i| if i < delay { 1.0 } else { t }).collect();
        let state = FlowState::new(Tensor::from_vec(vec![h, a], x.clone())?, times)?;

        let mut trace = model.trace(obs, &state)?;
        let v = trace.tape.value(trace.output).clone();
        let scaled = trace.tape.scale(trace.output, 1.0 - t)?;
        let a1 = trace.tape.add(trace.x_var, scaled)?;
        let a1_value = trace.tape.value(a1).clone();

        // Soft-masked residual; rows with zero weight contribute exactly 0
        // so unused target rows can hold anything.
        let mut cot = vec![0.0; h * a];
        for i in 0..h {
            if weights[i] > 0.0 {
                let yrow = target.y.row(i)?;
                let arow = a1_value.row(i)?;
                for j in 0..a {
                    cot[i * a + j] = weights[i] * (yrow[j] - arow[j]);
                }
            }
        }
        trace.tape.backward_seeded(a1, &Tensor::from_vec(vec![h, a], cot)?)?;
        let pullback = trace.tape.grad_or_zero(trace.x_var);

        let gamma = (1.0 - t).min(cfg.gamma_max);
        for idx in 0..h * a {
            let v_corr = v.data()[idx] + gamma * cfg.beta * pullback.data()[idx];
            x[idx] += dt * v_corr;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "guided sampler state became non-finite at step {}",
                step
            )));
        }
    }
    overwrite(&mut x, &target.y, delay, a);
    ActionChunk::new(Tensor::from_vec(vec![h, a], x)?)
}

fn overwrite(x: &mut [f64], y: &Tensor, delay: usize, action_dim: usize) {
    for i in 0..delay {
        let src = y.row(i).expect("target row in range");
        x[i * action_dim..(i + 1) * action_dim].copy_from_slice(src);
    }
}

/// Test-oriented velocity field `v(x) = anchor - x` per token, built from
/// tape primitives so guided sampling exercises the real vjp machinery on
/// a model whose Jacobian is known in closed form.
#[derive(Debug, Clone)]
pub struct AffineAnchorField {
    pub anchor: Tensor,
}

impl VelocityField for AffineAnchorField {
    fn horizon(&self) -> usize {
        self.anchor.shape()[0]
    }

    fn action_dim(&self) -> usize {
        self.anchor.shape()[1]
    }

    fn trace(&self, _obs: &Observation, state: &FlowState) -> Result<FieldTrace> {
        let mut tape = Tape::new();
        let x_var = tape.leaf(state.noisy.clone())?;
        let negx = tape.scale(x_var, -1.0)?;
        let anchor = tape.constant(self.anchor.clone())?;
        let output = tape.add(negx, anchor)?;
        Ok(FieldTrace { tape, x_var, output })
    }
}
