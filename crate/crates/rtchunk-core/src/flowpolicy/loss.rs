use super::{interpolate, ActionChunk, NoiseSample, Observation, PolicyParams};
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use rand::Rng;

/// A recorded loss computation. `backward` has not been run yet.
pub struct LossTrace {
    pub tape: Tape,
    pub loss: Var,
    /// The raw network output node (used to check adjoints at masked rows).
    pub output: Var,
    /// Parameter leaves in `PolicyParams::tensors` order.
    pub param_vars: Vec<Var>,
}

impl LossTrace {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item().expect("loss is scalar")
    }

    /// Run backward and collect parameter gradients in `tensors` order.
    pub fn into_grads(mut self) -> Result<LossGrads> {
        let loss = self.loss_value();
        self.tape.backward(self.loss)?;
        let grads =
            self.param_vars.iter().map(|v| self.tape.grad_or_zero(*v)).collect::<Vec<_>>();
        Ok(LossGrads { loss, grads })
    }
}

pub struct LossGrads {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

/// Prefix-conditioned flow-matching loss.
///
/// Draws one shared flow time ~ U[0,1) and a noise chunk, overwrites the
/// first `delay` rows of the noisy chunk with ground-truth actions at flow
/// time 1, and scores the squared velocity error on postfix rows only:
/// `sum(mask * (v - (chunk - eps))^2) / ((H - delay) * action_dim + 1e-8)`.
pub fn prefix_loss_traced<R: Rng>(
    params: &PolicyParams,
    obs: &Observation,
    chunk: &ActionChunk,
    delay: usize,
    rng: &mut R,
) -> Result<LossTrace> {
    let h = params.desc.horizon;
    let a = params.desc.action_dim;
    if delay > h {
        return Err(Error::Domain(format!("delay {} exceeds horizon {}", delay, h)));
    }
    if chunk.horizon() != h || chunk.action_dim() != a {
        return Err(Error::Domain("chunk shape does not match policy".into()));
    }

    // Draw order is part of the contract: one shared flow time, then the
    // noise chunk row-major. Equal seeds give equal draws for every delay.
    let tau: f64 = rng.gen::<f64>();
    let eps = NoiseSample::draw(rng, h, a);

    let times: Vec<f64> = (0..h).map(|i| if i < delay { 1.0 } else { tau }).collect();
    let state = interpolate(chunk, &eps, &times)?;

    let mut trace = params.forward_traced(&obs.features, &state)?;
    let tape = &mut trace.tape;

    // target = chunk - eps, entering the tape negated so the residual is a
    // single add.
    let neg_target: Vec<f64> = chunk
        .as_tensor()
        .data()
        .iter()
        .zip(eps.eps.data())
        .map(|(c, e)| -(c - e))
        .collect();
    let neg_target = tape.constant(Tensor::from_vec(vec![h, a], neg_target)?)?;
    let diff = tape.add(trace.output, neg_target)?;
    let sq = tape.mul(diff, diff)?;

    let mask_data: Vec<f64> = (0..h * a)
        .map(|idx| if idx / a < delay { 0.0 } else { 1.0 })
        .collect();
    let mask = Tensor::from_vec(vec![h, a], mask_data)?;
    let mask_var = tape.constant(mask)?;
    let masked = tape.mul(sq, mask_var)?;
    let total = tape.sum_all(masked)?;
    let denom = ((h - delay) * a) as f64 + 1e-8;
    let loss = tape.scale(total, 1.0 / denom)?;

    Ok(LossTrace { tape: trace.tape, loss, output: trace.output, param_vars: trace.param_vars })
}

/// Loss value only.
pub fn prefix_loss<R: Rng>(
    params: &PolicyParams,
    obs: &Observation,
    chunk: &ActionChunk,
    delay: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(prefix_loss_traced(params, obs, chunk, delay, rng)?.loss_value())
}

/// Standard flow-matching loss: the `delay = 0` case of the prefix loss,
/// bit-identical to it under equal seeds.
pub fn fm_loss_traced<R: Rng>(
    params: &PolicyParams,
    obs: &Observation,
    chunk: &ActionChunk,
    rng: &mut R,
) -> Result<LossTrace> {
    prefix_loss_traced(params, obs, chunk, 0, rng)
}

pub fn fm_loss<R: Rng>(
    params: &PolicyParams,
    obs: &Observation,
    chunk: &ActionChunk,
    rng: &mut R,
) -> Result<f64> {
    prefix_loss(params, obs, chunk, 0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowpolicy::PolicyDescriptor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desc() -> PolicyDescriptor {
        PolicyDescriptor {
            obs_dim: 2,
            action_dim: 2,
            horizon: 4,
            width: 8,
            depth: 2,
            token_mixing: false,
        }
    }

    fn randomized_params(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::init(desc(), &mut rng).unwrap();
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.2..0.2);
                }
            }
        }
        p
    }

    fn random_chunk(seed: u64) -> ActionChunk {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ActionChunk::new(Tensor::from_vec(vec![4, 2], data).unwrap()).unwrap()
    }

    #[test]
    fn zero_field_and_chunk_equal_to_noise_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut params = PolicyParams::init(desc(), &mut rng).unwrap();
        params.zero_output();
        // Pre-draw what the loss will draw so the chunk equals the noise.
        let mut probe = ChaCha8Rng::seed_from_u64(99);
        let _tau: f64 = probe.gen();
        let eps = NoiseSample::draw(&mut probe, 4, 2);
        let chunk = ActionChunk::new(eps.eps.clone()).unwrap();
        let obs = Observation::new(vec![0.0, 0.0]);
        let mut loss_rng = ChaCha8Rng::seed_from_u64(99);
        let loss = fm_loss(&params, &obs, &chunk, &mut loss_rng).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn prefix_loss_at_zero_delay_is_bit_identical_to_fm_loss() {
        let params = randomized_params(41);
        let chunk = random_chunk(42);
        let obs = Observation::new(vec![0.3, -0.3]);
        for seed in 0..20 {
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let a = fm_loss(&params, &obs, &chunk, &mut r1).unwrap();
            let b = prefix_loss(&params, &obs, &chunk, 0, &mut r2).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn prefix_loss_at_full_delay_is_zero() {
        let params = randomized_params(43);
        let chunk = random_chunk(44);
        let obs = Observation::new(vec![0.1, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let loss = prefix_loss(&params, &obs, &chunk, 4, &mut rng).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn prefix_loss_rejects_delay_beyond_horizon() {
        let params = randomized_params(45);
        let chunk = random_chunk(46);
        let obs = Observation::new(vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(prefix_loss(&params, &obs, &chunk, 5, &mut rng).is_err());
    }

    #[test]
    fn adjoints_at_prefix_rows_are_exactly_zero() {
        let params = randomized_params(47);
        let chunk = random_chunk(48);
        let obs = Observation::new(vec![-0.4, 0.2]);
        for delay in 1..4usize {
            let mut rng = ChaCha8Rng::seed_from_u64(delay as u64);
            let mut trace =
                prefix_loss_traced(&params, &obs, &chunk, delay, &mut rng).unwrap();
            trace.tape.backward(trace.loss).unwrap();
            let out_grad = trace.tape.grad_or_zero(trace.output);
            for i in 0..4 {
                for j in 0..2 {
                    let g = out_grad.row(i).unwrap()[j];
                    if i < delay {
                        assert_eq!(g, 0.0, "prefix adjoint leaked at row {}", i);
                    }
                }
            }
            // Postfix rows should carry signal.
            assert!(out_grad.row(delay).unwrap().iter().any(|g| *g != 0.0));
        }
    }

    #[test]
    fn changing_postfix_time_does_not_change_masked_prefix_contribution() {
        // The prefix contribution to the loss is identically zero whatever
        // the postfix flow time turns out to be: masked rows never enter.
        let params = randomized_params(49);
        let chunk = random_chunk(50);
        let obs = Observation::new(vec![0.0, 1.0]);
        for seed in [1u64, 2, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trace = prefix_loss_traced(&params, &obs, &chunk, 2, &mut rng).unwrap();
            trace.tape.backward(trace.loss).unwrap();
            let g = trace.tape.grad_or_zero(trace.output);
            assert!(g.row(0).unwrap().iter().all(|v| *v == 0.0));
            assert!(g.row(1).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    /// Gradient of fm_loss with respect to every parameter matches central
    /// finite differences on a width-8 network.
    #[test]
    fn fm_loss_gradient_matches_finite_differences() {
        let params = randomized_params(51);
        let chunk = random_chunk(52);
        let obs = Observation::new(vec![0.2, -0.1]);
        let seed = 77u64;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grads = fm_loss_traced(&params, &obs, &chunk, &mut rng)
            .unwrap()
            .into_grads()
            .unwrap();

        let h = 1e-5;
        for (ti, _) in params.tensors().iter().enumerate() {
            let n = params.tensors()[ti].len();
            for k in (0..n).step_by(3) {
                let mut hi = params.clone();
                hi.tensors_mut()[ti].data_mut()[k] += h;
                let mut lo = params.clone();
                lo.tensors_mut()[ti].data_mut()[k] -= h;
                let mut r1 = ChaCha8Rng::seed_from_u64(seed);
                let mut r2 = ChaCha8Rng::seed_from_u64(seed);
                let fhi = fm_loss(&hi, &obs, &chunk, &mut r1).unwrap();
                let flo = fm_loss(&lo, &obs, &chunk, &mut r2).unwrap();
                let fd = (fhi - flo) / (2.0 * h);
                let ad = grads.grads[ti].data()[k];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "tensor {} elem {}: ad {} fd {}", ti, k, ad, fd);
            }
        }
    }
}
