//! The velocity-field policy: flow-matching losses (plain and
//! prefix-conditioned) and Euler samplers (plain and prefix-conditioned).

mod loss;
mod net;
mod sample;

pub use loss::{fm_loss, fm_loss_traced, prefix_loss, prefix_loss_traced, LossGrads, LossTrace};
pub use net::{PolicyDescriptor, PolicyParams, PolicyTrace, TIME_FEATURES};
pub use sample::{sample, sample_with_prefix};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// A chunk of `H` consecutive action vectors, one row per controller tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    actions: Tensor,
}

impl ActionChunk {
    pub fn new(actions: Tensor) -> Result<Self> {
        actions.dims2()?;
        if !actions.all_finite() {
            return Err(Error::Numeric("action chunk contains non-finite values".into()));
        }
        Ok(ActionChunk { actions })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let h = rows.len();
        let a = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(h * a);
        for row in rows {
            if row.len() != a {
                return Err(Error::Domain("ragged action rows".into()));
            }
            data.extend_from_slice(row);
        }
        Self::new(Tensor::from_vec(vec![h, a], data)?)
    }

    pub fn horizon(&self) -> usize {
        self.actions.shape()[0]
    }

    pub fn action_dim(&self) -> usize {
        self.actions.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.actions.row(i).expect("row index within horizon")
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.actions
    }
}

/// Environment state encoding consumed by the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Observation { features }
    }
}

/// An i.i.d. standard normal draw shaped like an action chunk.
#[derive(Debug, Clone)]
pub struct NoiseSample {
    pub eps: Tensor,
}

impl NoiseSample {
    pub fn draw<R: Rng>(rng: &mut R, horizon: usize, action_dim: usize) -> Self {
        let data: Vec<f64> =
            (0..horizon * action_dim).map(|_| rng.sample(StandardNormal)).collect();
        NoiseSample { eps: Tensor::from_vec(vec![horizon, action_dim], data).expect("shape") }
    }
}

/// A noisy chunk together with one flow time per action timestep.
/// Prefix rows, when present, carry flow time exactly 1.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub noisy: Tensor,
    pub times: Vec<f64>,
}

impl FlowState {
    pub fn new(noisy: Tensor, times: Vec<f64>) -> Result<Self> {
        let (h, _) = noisy.dims2()?;
        if times.len() != h {
            return Err(Error::Domain(format!(
                "flow times length {} does not match horizon {}",
                times.len(),
                h
            )));
        }
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Domain("flow times must lie in [0, 1]".into()));
        }
        Ok(FlowState { noisy, times })
    }

    pub fn horizon(&self) -> usize {
        self.times.len()
    }
}

/// Per-token linear interpolation between noise and data:
/// row i of the result is `times[i] * chunk[i] + (1 - times[i]) * eps[i]`.
pub fn interpolate(chunk: &ActionChunk, eps: &NoiseSample, times: &[f64]) -> Result<FlowState> {
    let (h, a) = chunk.as_tensor().dims2()?;
    if eps.eps.shape() != chunk.as_tensor().shape() {
        return Err(Error::Domain("noise shape does not match chunk shape".into()));
    }
    if times.len() != h {
        return Err(Error::Domain("flow time count does not match horizon".into()));
    }
    if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Domain("flow times must lie in [0, 1]".into()));
    }
    let mut data = Vec::with_capacity(h * a);
    for i in 0..h {
        let t = times[i];
        let crow = chunk.row(i);
        let erow = eps.eps.row(i)?;
        for j in 0..a {
            data.push(t * crow[j] + (1.0 - t) * erow[j]);
        }
    }
    FlowState::new(Tensor::from_vec(vec![h, a], data)?, times.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chunk_2x2(rows: [[f64; 2]; 2]) -> ActionChunk {
        ActionChunk::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).unwrap()
    }

    #[test]
    fn interpolate_at_one_returns_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chunk = chunk_2x2([[2.0, 0.0], [1.0, -1.0]]);
        let eps = NoiseSample::draw(&mut rng, 2, 2);
        let fs = interpolate(&chunk, &eps, &[1.0, 1.0]).unwrap();
        assert_eq!(fs.noisy.data(), chunk.as_tensor().data());
    }

    #[test]
    fn interpolate_at_zero_returns_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chunk = chunk_2x2([[2.0, 0.0], [1.0, -1.0]]);
        let eps = NoiseSample::draw(&mut rng, 2, 2);
        let fs = interpolate(&chunk, &eps, &[0.0, 0.0]).unwrap();
        assert_eq!(fs.noisy.data(), eps.eps.data());
    }

    #[test]
    fn interpolate_midpoint() {
        let chunk = chunk_2x2([[2.0, 0.0], [2.0, 0.0]]);
        let eps = NoiseSample {
            eps: Tensor::from_vec(vec![2, 2], vec![0.0, 2.0, 0.0, 2.0]).unwrap(),
        };
        let fs = interpolate(&chunk, &eps, &[0.5, 0.5]).unwrap();
        assert_eq!(fs.noisy.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn interpolate_rejects_out_of_range_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chunk = chunk_2x2([[0.0, 0.0], [0.0, 0.0]]);
        let eps = NoiseSample::draw(&mut rng, 2, 2);
        assert!(interpolate(&chunk, &eps, &[0.5, 1.5]).is_err());
        assert!(interpolate(&chunk, &eps, &[-0.1, 0.5]).is_err());
    }
}
