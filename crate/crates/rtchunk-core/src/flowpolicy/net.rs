use super::FlowState;
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

/// Number of fixed sinusoidal features derived from one flow time.
pub const TIME_FEATURES: usize = 7;

fn time_feature_row(t: f64) -> [f64; TIME_FEATURES] {
    let pi = std::f64::consts::PI;
    [
        t,
        (pi * t).sin(),
        (pi * t).cos(),
        (2.0 * pi * t).sin(),
        (2.0 * pi * t).cos(),
        (4.0 * pi * t).sin(),
        (4.0 * pi * t).cos(),
    ]
}

/// Architecture descriptor. Serialized into checkpoints, so changing the
/// meaning of a field is a format break.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub width: usize,
    pub depth: usize,
    /// When false the network is strictly per-token: output row i depends
    /// only on (obs, x[i], time[i], i).
    pub token_mixing: bool,
}

impl PolicyDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0
            || self.action_dim == 0
            || self.horizon == 0
            || self.width == 0
            || self.depth == 0
        {
            return Err(Error::Config("policy descriptor dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Weights of the residual MLP velocity field.
///
/// Flow time enters per token: fixed sinusoidal features are projected by a
/// shared matrix and a learned per-token embedding table is added, so
/// supplying distinct times per token uses exactly the same parameters as
/// a shared scalar time.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub desc: PolicyDescriptor,
    pub time_proj: Tensor,
    pub token_embed: Tensor,
    pub obs_proj: Tensor,
    pub act_proj: Tensor,
    pub input_bias: Tensor,
    pub blocks: Vec<ResBlock>,
    pub mix: Option<Tensor>,
    pub out_proj: Tensor,
    pub out_bias: Tensor,
}

/// A recorded forward pass, with handles back into the tape.
pub struct PolicyTrace {
    pub tape: Tape,
    /// H x action_dim velocity output.
    pub output: Var,
    /// The noisy-chunk input leaf (vjp target for guidance).
    pub x_var: Var,
    /// Parameter leaves, in `PolicyParams::tensors` order.
    pub param_vars: Vec<Var>,
}

impl PolicyParams {
    /// Random initialization. The output projection and the second matrix
    /// of each residual block start at zero, so the initial velocity field
    /// is identically zero.
    pub fn init<R: Rng>(desc: PolicyDescriptor, rng: &mut R) -> Result<Self> {
        desc.validate()?;
        let w = desc.width;
        let mat = |rows: usize, cols: usize, fan_in: usize, rng: &mut R| {
            let std = (1.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid normal");
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(dist)).collect();
            Tensor::from_vec(vec![rows, cols], data).expect("shape")
        };
        let blocks = (0..desc.depth)
            .map(|_| ResBlock {
                w1: mat(w, w, w, rng),
                b1: Tensor::zeros(vec![1, w]),
                w2: Tensor::zeros(vec![w, w]),
                b2: Tensor::zeros(vec![1, w]),
            })
            .collect();
        Ok(PolicyParams {
            time_proj: mat(TIME_FEATURES, w, TIME_FEATURES, rng),
            token_embed: mat(desc.horizon, w, TIME_FEATURES, rng),
            obs_proj: mat(desc.obs_dim, w, desc.obs_dim, rng),
            act_proj: mat(desc.action_dim, w, desc.action_dim, rng),
            input_bias: Tensor::zeros(vec![1, w]),
            blocks,
            mix: if desc.token_mixing {
                Some(Tensor::zeros(vec![desc.horizon, desc.horizon]))
            } else {
                None
            },
            out_proj: Tensor::zeros(vec![w, desc.action_dim]),
            out_bias: Tensor::zeros(vec![1, desc.action_dim]),
            desc,
        })
    }

    /// All parameter tensors in a fixed serialization order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.time_proj,
            &self.token_embed,
            &self.obs_proj,
            &self.act_proj,
            &self.input_bias,
        ];
        for b in &self.blocks {
            out.extend([&b.w1, &b.b1, &b.w2, &b.b2]);
        }
        if let Some(m) = &self.mix {
            out.push(m);
        }
        out.extend([&self.out_proj, &self.out_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.time_proj,
            &mut self.token_embed,
            &mut self.obs_proj,
            &mut self.act_proj,
            &mut self.input_bias,
        ];
        for b in &mut self.blocks {
            out.extend([&mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2]);
        }
        if let Some(m) = &mut self.mix {
            out.push(m);
        }
        out.extend([&mut self.out_proj, &mut self.out_bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Record the forward pass on a fresh tape with the noisy chunk and all
    /// parameters as leaves.
    pub fn forward_traced(&self, obs: &[f64], state: &FlowState) -> Result<PolicyTrace> {
        let d = &self.desc;
        if obs.len() != d.obs_dim {
            return Err(Error::Domain(format!(
                "observation length {} does not match obs_dim {}",
                obs.len(),
                d.obs_dim
            )));
        }
        let (h, a) = state.noisy.dims2()?;
        if h != d.horizon || a != d.action_dim {
            return Err(Error::Domain(format!(
                "flow state shape {}x{} does not match policy {}x{}",
                h, a, d.horizon, d.action_dim
            )));
        }

        let mut tape = Tape::new();
        let x_var = tape.leaf(state.noisy.clone())?;
        let param_tensors = self.tensors();
        let mut param_vars = Vec::with_capacity(param_tensors.len());
        for t in &param_tensors {
            param_vars.push(tape.leaf((*t).clone())?);
        }
        // Positions of named parameters inside param_vars mirror tensors().
        let time_proj = param_vars[0];
        let token_embed = param_vars[1];
        let obs_proj = param_vars[2];
        let act_proj = param_vars[3];
        let input_bias = param_vars[4];
        let block_base = 5;
        let mix = self.mix.as_ref().map(|_| param_vars[block_base + 4 * self.blocks.len()]);
        let out_off = block_base + 4 * self.blocks.len() + usize::from(self.mix.is_some());
        let out_proj = param_vars[out_off];
        let out_bias = param_vars[out_off + 1];

        // Constant inputs: observation broadcast to every token row, and
        // sinusoidal features of the per-token flow times.
        let mut obs_rows = Vec::with_capacity(h * d.obs_dim);
        for _ in 0..h {
            obs_rows.extend_from_slice(obs);
        }
        let obs_mat = tape.constant(Tensor::from_vec(vec![h, d.obs_dim], obs_rows)?)?;
        let mut tf = Vec::with_capacity(h * TIME_FEATURES);
        for t in &state.times {
            tf.extend_from_slice(&time_feature_row(*t));
        }
        let time_mat = tape.constant(Tensor::from_vec(vec![h, TIME_FEATURES], tf)?)?;

        let u_obs = tape.affine(obs_mat, obs_proj, input_bias)?;
        let u_act = tape.matmul(x_var, act_proj)?;
        let u_time = tape.matmul(time_mat, time_proj)?;
        let u = tape.add(u_obs, u_act)?;
        let u = tape.add(u, u_time)?;
        let u = tape.add(u, token_embed)?;
        let mut hid = tape.tanh(u)?;

        for (i, _) in self.blocks.iter().enumerate() {
            let w1 = param_vars[block_base + 4 * i];
            let b1 = param_vars[block_base + 4 * i + 1];
            let w2 = param_vars[block_base + 4 * i + 2];
            let b2 = param_vars[block_base + 4 * i + 3];
            let z = tape.affine(hid, w1, b1)?;
            let z = tape.tanh(z)?;
            let z = tape.affine(z, w2, b2)?;
            hid = tape.add(hid, z)?;
            if i == 0 {
                if let Some(mix_var) = mix {
                    let hm = tape.tanh(hid)?;
                    let mixed = tape.matmul(mix_var, hm)?;
                    hid = tape.add(hid, mixed)?;
                }
            }
        }

        let output = tape.affine(hid, out_proj, out_bias)?;
        Ok(PolicyTrace { tape, output, x_var, param_vars })
    }

    /// Velocity value only; a deterministic function of its inputs.
    pub fn forward(&self, obs: &[f64], state: &FlowState) -> Result<Tensor> {
        let trace = self.forward_traced(obs, state)?;
        Ok(trace.tape.value(trace.output).clone())
    }

    /// Force the network output to be identically zero regardless of input.
    pub fn zero_output(&mut self) {
        self.out_proj = Tensor::zeros(self.out_proj.shape().to_vec());
        self.out_bias = Tensor::zeros(self.out_bias.shape().to_vec());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_desc(token_mixing: bool) -> PolicyDescriptor {
        PolicyDescriptor {
            obs_dim: 3,
            action_dim: 2,
            horizon: 4,
            width: 8,
            depth: 2,
            token_mixing,
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, h: usize, a: usize) -> FlowState {
        let data: Vec<f64> = (0..h * a).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let times: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..1.0)).collect();
        FlowState::new(Tensor::from_vec(vec![h, a], data).unwrap(), times).unwrap()
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = PolicyParams::init(small_desc(false), &mut rng).unwrap();
        // Give the output head nonzero weights so the test is not vacuous.
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = 0.01;
                }
            }
        }
        let state = random_state(&mut rng, 4, 2);
        let obs = [0.1, -0.2, 0.3];
        let v1 = params.forward(&obs, &state).unwrap();
        let v2 = params.forward(&obs, &state).unwrap();
        assert_eq!(v1.shape(), &[4, 2]);
        assert_eq!(v1.data(), v2.data());
    }

    #[test]
    fn swapping_token_rows_only_affects_those_tokens_without_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = PolicyParams::init(small_desc(false), &mut rng).unwrap();
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = 0.05;
                }
            }
        }
        let obs = [0.4, 0.0, -0.1];
        let state = random_state(&mut rng, 4, 2);
        let base = params.forward(&obs, &state).unwrap();

        // Swap tokens 1 and 2 in both x and times.
        let mut data = state.noisy.data().to_vec();
        for j in 0..2 {
            data.swap(2 + j, 4 + j);
        }
        let mut times = state.times.clone();
        times.swap(1, 2);
        let swapped =
            FlowState::new(Tensor::from_vec(vec![4, 2], data).unwrap(), times).unwrap();
        let out = params.forward(&obs, &swapped).unwrap();

        for j in 0..2 {
            assert_eq!(base.row(0).unwrap()[j], out.row(0).unwrap()[j]);
            assert_eq!(base.row(3).unwrap()[j], out.row(3).unwrap()[j]);
        }
        // Swapped positions generally change (per-token table differs).
        assert_ne!(base.row(1).unwrap(), out.row(1).unwrap());
    }

    #[test]
    fn per_token_times_use_the_same_parameter_count_as_shared_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = PolicyParams::init(small_desc(false), &mut rng).unwrap();
        let n = params.param_count();

        // A "shared time" use of the same architecture: all flow times
        // equal. Same params, same count; conditioning per token is free.
        let state_shared = FlowState::new(Tensor::zeros(vec![4, 2]), vec![0.3; 4]).unwrap();
        let state_per_token =
            FlowState::new(Tensor::zeros(vec![4, 2]), vec![1.0, 0.3, 0.3, 0.3]).unwrap();
        params.forward(&[0.0, 0.0, 0.0], &state_shared).unwrap();
        params.forward(&[0.0, 0.0, 0.0], &state_per_token).unwrap();
        assert_eq!(params.param_count(), n);
    }

    #[test]
    fn zeroed_head_gives_zero_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = PolicyParams::init(small_desc(true), &mut rng).unwrap();
        let state = random_state(&mut rng, 4, 2);
        let v = params.forward(&[1.0, 2.0, 3.0], &state).unwrap();
        assert!(v.data().iter().all(|x| *x == 0.0));
    }
}
