use super::delay::DelayDistribution;
use crate::envkit::NormStats;
use crate::error::{Error, Result};
use crate::flowpolicy::{PolicyDescriptor, PolicyParams};
use crate::ndcore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Training provenance carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs_seen: u64,
    pub gradient_steps: u64,
    pub seed: u64,
    pub delay_dist: Option<DelayDistribution>,
}

/// A trained policy with everything needed to run it: weights,
/// architecture descriptor, action normalization, and whether it was
/// trained with prefix conditioning. The conditioning flag is fixed at
/// creation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub stats: NormStats,
    pub conditioned: bool,
    pub meta: TrainMeta,
}

// --- binary container ------------------------------------------------------
//
// Layout (little-endian):
//   magic          4 bytes "RTCK"
//   version        u32 = 1
//   obs_dim        u32
//   action_dim     u32
//   horizon        u32
//   width          u32
//   depth          u32
//   token_mixing   u8
//   conditioned    u8
//   epochs_seen    u64
//   gradient_steps u64
//   seed           u64
//   delay tag      u8 (0 none, 1 uniform, 2 geometric)
//   delay d_max    u32
//   delay base     f64 (0 when unused)
//   mean           action_dim x f64
//   std            action_dim x f64
//   per parameter tensor (fixed order): rank u32, dims u32..., data f64...

const MAGIC: &[u8; 4] = b"RTCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let d = &ckpt.params.desc;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [d.obs_dim, d.action_dim, d.horizon, d.width, d.depth] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&[u8::from(d.token_mixing), u8::from(ckpt.conditioned)])?;
    w.write_all(&ckpt.meta.epochs_seen.to_le_bytes())?;
    w.write_all(&ckpt.meta.gradient_steps.to_le_bytes())?;
    w.write_all(&ckpt.meta.seed.to_le_bytes())?;
    match &ckpt.meta.delay_dist {
        None => {
            w.write_all(&[0u8])?;
            w.write_all(&0u32.to_le_bytes())?;
            w.write_all(&0f64.to_le_bytes())?;
        }
        Some(DelayDistribution::UniformInt { d_max }) => {
            w.write_all(&[1u8])?;
            w.write_all(&(*d_max as u32).to_le_bytes())?;
            w.write_all(&0f64.to_le_bytes())?;
        }
        Some(DelayDistribution::GeometricWeights { base, d_max }) => {
            w.write_all(&[2u8])?;
            w.write_all(&(*d_max as u32).to_le_bytes())?;
            w.write_all(&base.to_le_bytes())?;
        }
    }
    for v in ckpt.stats.mean.iter().chain(&ckpt.stats.std) {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in ckpt.params.tensors() {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for dim in t.shape() {
            w.write_all(&(*dim as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
    }
    let obs_dim = read_u32(&mut r)? as usize;
    let action_dim = read_u32(&mut r)? as usize;
    let horizon = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let depth = read_u32(&mut r)? as usize;
    let mut flags = [0u8; 2];
    read_exact(&mut r, &mut flags)?;
    let desc = PolicyDescriptor {
        obs_dim,
        action_dim,
        horizon,
        width,
        depth,
        token_mixing: flags[0] != 0,
    };
    desc.validate().map_err(|e| Error::Format(format!("bad descriptor: {}", e)))?;
    let conditioned = flags[1] != 0;
    let epochs_seen = read_u64(&mut r)?;
    let gradient_steps = read_u64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let mut tag = [0u8; 1];
    read_exact(&mut r, &mut tag)?;
    let d_max = read_u32(&mut r)? as usize;
    let base = read_f64(&mut r)?;
    let delay_dist = match tag[0] {
        0 => None,
        1 => Some(DelayDistribution::UniformInt { d_max }),
        2 => Some(DelayDistribution::GeometricWeights { base, d_max }),
        other => return Err(Error::Format(format!("unknown delay distribution tag {}", other))),
    };
    let mean = read_f64s(&mut r, action_dim)?;
    let std = read_f64s(&mut r, action_dim)?;

    // Materialize a parameter skeleton with the right shapes, then fill it
    // in the fixed tensor order.
    let mut seed_rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = PolicyParams::init(desc, &mut seed_rng)
        .map_err(|e| Error::Format(format!("bad descriptor: {}", e)))?;
    for t in params.tensors_mut() {
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)? as usize);
        }
        if dims != t.shape() {
            return Err(Error::Format(format!(
                "tensor shape {:?} does not match descriptor shape {:?}",
                dims,
                t.shape()
            )));
        }
        let data = read_f64s(&mut r, t.len())?;
        *t = Tensor::from_vec(dims, data)?;
    }
    // Trailing bytes mean the file does not match its own header.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }

    Ok(Checkpoint {
        params,
        stats: NormStats { mean, std },
        conditioned,
        meta: TrainMeta { epochs_seen, gradient_steps, seed, delay_dist },
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_checkpoint(seed: u64) -> Checkpoint {
        let desc = PolicyDescriptor {
            obs_dim: 3,
            action_dim: 2,
            horizon: 4,
            width: 8,
            depth: 2,
            token_mixing: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = PolicyParams::init(desc, &mut rng).unwrap();
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        Checkpoint {
            params,
            stats: NormStats { mean: vec![0.1, -0.2], std: vec![0.9, 1.4] },
            conditioned: true,
            meta: TrainMeta {
                epochs_seen: 32,
                gradient_steps: 4096,
                seed: 1234,
                delay_dist: Some(DelayDistribution::GeometricWeights { base: 0.5, d_max: 4 }),
            },
        }
    }

    #[test]
    fn save_load_save_produces_identical_bytes() {
        let ckpt = toy_checkpoint(3);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.rtck");
        let p2 = dir.path().join("b.rtck");
        save_checkpoint(&ckpt, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn truncation_and_bad_magic_are_rejected() {
        let ckpt = toy_checkpoint(4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.rtck");
        save_checkpoint(&ckpt, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        std::fs::write(&p, &corrupt).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
        // Wrong version.
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        std::fs::write(&p, &wrong_version).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn loaded_checkpoint_samples_identically() {
        use crate::flowpolicy::{sample, Observation};
        let ckpt = toy_checkpoint(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.rtck");
        save_checkpoint(&ckpt, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        let obs = Observation::new(vec![0.3, -0.3, 0.5]);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = sample(&ckpt.params, &obs, 8, &mut r1).unwrap();
        let b = sample(&loaded.params, &obs, 8, &mut r2).unwrap();
        let ab: Vec<u64> = a.as_tensor().data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.as_tensor().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
}
