use super::{ActionChunk, FlowState, NoiseSample, Observation, PolicyParams};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use rand::Rng;

/// Euler-integrate the velocity field from noise to data with a shared
/// scalar flow time broadcast to every token.
pub fn sample<R: Rng>(
    params: &PolicyParams,
    obs: &Observation,
    num_steps: usize,
    rng: &mut R,
) -> Result<ActionChunk> {
    let h = params.desc.horizon;
    let a = params.desc.action_dim;
    let empty = Tensor::zeros(vec![h, a]);
    sample_with_prefix(params, obs, &empty, 0, num_steps, rng)
}

/// Prefix-conditioned Euler sampler.
///
/// `prefix` is an H-row buffer; only rows `[0, delay)` are read. Before
/// every integration step those rows are overwritten with the prefix at
/// flow time 1, and they are overwritten once more on return, so the
/// output carries the prefix bit-exactly.
pub fn sample_with_prefix<R: Rng>(
    params: &PolicyParams,
    obs: &Observation,
    prefix: &Tensor,
    delay: usize,
    num_steps: usize,
    rng: &mut R,
) -> Result<ActionChunk> {
    let h = params.desc.horizon;
    let a = params.desc.action_dim;
    if delay > h {
        return Err(Error::Domain(format!("delay {} exceeds horizon {}", delay, h)));
    }
    if num_steps == 0 {
        return Err(Error::Domain("num_steps must be at least 1".into()));
    }
    let (ph, pa) = prefix.dims2()?;
    if ph != h || pa != a {
        return Err(Error::Domain(format!(
            "prefix buffer {}x{} does not match policy {}x{}",
            ph, pa, h, a
        )));
    }
    for i in 0..delay {
        if prefix.row(i)?.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("prefix row {} is not finite", i)));
        }
    }

    let mut x = NoiseSample::draw(rng, h, a).eps.data().to_vec();
    let dt = 1.0 / num_steps as f64;

    for step in 0..num_steps {
        let t = step as f64 * dt;
        overwrite_prefix(&mut x, prefix, delay, a);
        let times: Vec<f64> = (0..h).map(|i| if i < delay { 1.0 } else { t }).collect();
        let state = FlowState::new(Tensor::from_vec(vec![h, a], x.clone())?, times)?;
        let v = params.forward(&obs.features, &state)?;
        for (xi, vi) in x.iter_mut().zip(v.data()) {
            *xi += dt * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "sampler state became non-finite at step {}",
                step
            )));
        }
    }
    overwrite_prefix(&mut x, prefix, delay, a);
    ActionChunk::new(Tensor::from_vec(vec![h, a], x)?)
}

fn overwrite_prefix(x: &mut [f64], prefix: &Tensor, delay: usize, action_dim: usize) {
    for i in 0..delay {
        let src = prefix.row(i).expect("prefix row in range");
        x[i * action_dim..(i + 1) * action_dim].copy_from_slice(src);
    }
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
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
        }
        p
    }

    #[test]
    fn identical_seeds_give_identical_samples() {
        let params = randomized_params(61);
        let obs = Observation::new(vec![0.5, -0.5]);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let c1 = sample(&params, &obs, 10, &mut r1).unwrap();
        let c2 = sample(&params, &obs, 10, &mut r2).unwrap();
        assert_eq!(c1.as_tensor().data(), c2.as_tensor().data());
    }

    #[test]
    fn zero_velocity_field_returns_the_initial_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut params = PolicyParams::init(desc(), &mut rng).unwrap();
        params.zero_output();
        let obs = Observation::new(vec![0.0, 0.0]);
        let mut probe = ChaCha8Rng::seed_from_u64(1234);
        let noise = NoiseSample::draw(&mut probe, 4, 2);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(1234);
        let chunk = sample(&params, &obs, 10, &mut sample_rng).unwrap();
        assert_eq!(chunk.as_tensor().data(), noise.eps.data());
    }

    #[test]
    fn zero_delay_prefix_sampling_matches_plain_sampling_bit_exactly() {
        let params = randomized_params(63);
        let obs = Observation::new(vec![0.1, 0.2]);
        let prefix = Tensor::zeros(vec![4, 2]);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = sample(&params, &obs, 8, &mut r1).unwrap();
        let b = sample_with_prefix(&params, &obs, &prefix, 0, 8, &mut r2).unwrap();
        let ab: Vec<u64> = a.as_tensor().data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.as_tensor().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }

    #[test]
    fn prefix_rows_are_returned_verbatim() {
        let params = randomized_params(64);
        let obs = Observation::new(vec![-0.3, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for delay in 0..=4usize {
            let pdata: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let prefix = Tensor::from_vec(vec![4, 2], pdata).unwrap();
            let chunk =
                sample_with_prefix(&params, &obs, &prefix, delay, 6, &mut rng).unwrap();
            for i in 0..delay {
                assert_eq!(chunk.row(i), prefix.row(i).unwrap());
            }
        }
    }

    #[test]
    fn sampler_rejects_bad_arguments() {
        let params = randomized_params(65);
        let obs = Observation::new(vec![0.0, 0.0]);
        let prefix = Tensor::zeros(vec![4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_with_prefix(&params, &obs, &prefix, 5, 4, &mut rng).is_err());
        assert!(sample_with_prefix(&params, &obs, &prefix, 0, 0, &mut rng).is_err());
        let bad = Tensor::from_vec(vec![4, 2], vec![f64::NAN; 8]).unwrap();
        assert!(sample_with_prefix(&params, &obs, &bad, 1, 4, &mut rng).is_err());
    }
}
