use super::env::{Env, EnvConfig, Status, ACTION_DIM, OBS_DIM};
use super::expert::{expert_action, ExpertStyle};
use crate::error::{Error, Result};
use crate::flowpolicy::{ActionChunk, Observation};
use crate::ndcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Per-dimension action normalization statistics, computed over the
/// executed actions of retained episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn normalize_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.mean[j]) / self.std[j];
        }
    }

    pub fn denormalize_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = row[j] * self.std[j] + self.mean[j];
        }
    }

    pub fn normalize_chunk(&self, chunk: &ActionChunk) -> Result<ActionChunk> {
        let (h, a) = chunk.as_tensor().dims2()?;
        let mut data = vec![0.0; h * a];
        for i in 0..h {
            self.normalize_row(chunk.row(i), &mut data[i * a..(i + 1) * a]);
        }
        ActionChunk::new(Tensor::from_vec(vec![h, a], data)?)
    }

    pub fn denormalize_chunk(&self, chunk: &ActionChunk) -> Result<ActionChunk> {
        let (h, a) = chunk.as_tensor().dims2()?;
        let mut data = vec![0.0; h * a];
        for i in 0..h {
            self.denormalize_row(chunk.row(i), &mut data[i * a..(i + 1) * a]);
        }
        ActionChunk::new(Tensor::from_vec(vec![h, a], data)?)
    }
}

/// One successful expert episode sliced into overlapping chunks: the chunk
/// stored at tick t starts with the action executed at tick t.
#[derive(Debug, Clone)]
pub struct Demo {
    pub pairs: Vec<(Observation, ActionChunk)>,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub horizon: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub stats: NormStats,
    pub episodes: Vec<Demo>,
}

impl Dataset {
    pub fn num_samples(&self) -> usize {
        self.episodes.iter().map(|e| e.pairs.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &(Observation, ActionChunk)> {
        self.episodes.iter().flat_map(|e| e.pairs.iter())
    }
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub episodes_run: usize,
    pub episodes_kept: usize,
    pub total_pairs: usize,
    pub mean_episode_ticks: f64,
}

/// Roll out the scripted expert closed-loop and slice every successful
/// episode into H-chunks at every tick; the final H-1 chunks hold the last
/// action where they run off the end of the episode.
pub fn gen_dataset(
    cfg: &EnvConfig,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(Dataset, GenSummary)> {
    if n_episodes == 0 {
        return Err(Error::Domain("n_episodes must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let env = Env::new(cfg.clone());
    let mut master = ChaCha8Rng::seed_from_u64(seed);

    let mut episodes = Vec::new();
    let mut all_actions: Vec<[f64; 2]> = Vec::new();
    let mut total_ticks = 0usize;

    for _ in 0..n_episodes {
        let ep_seed: u64 = master.gen();
        let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let mut state = env.init_state(&mut rng);
        let style = ExpertStyle::draw(&mut rng);

        let mut observations = Vec::new();
        let mut actions: Vec<[f64; 2]> = Vec::new();
        let success = loop {
            observations.push(env.observe(&state));
            let action = expert_action(&env, &state, &style);
            actions.push(action);
            state = env.step(&state, action);
            match env.status(&state) {
                Status::Success => break true,
                Status::Failure => break false,
                Status::Running => {}
            }
        };
        if !success {
            continue;
        }
        total_ticks += actions.len();

        let ticks = actions.len();
        let mut pairs = Vec::with_capacity(ticks);
        for t in 0..ticks {
            let mut rows = Vec::with_capacity(horizon);
            for i in 0..horizon {
                let idx = (t + i).min(ticks - 1);
                rows.push(actions[idx].to_vec());
            }
            pairs.push((observations[t].clone(), ActionChunk::from_rows(&rows)?));
        }
        all_actions.extend(actions.iter().copied());
        episodes.push(Demo { pairs, success: true });
    }

    if episodes.is_empty() {
        return Err(Error::Dataset("every expert episode failed".into()));
    }

    let n = all_actions.len() as f64;
    let mut mean = vec![0.0; ACTION_DIM];
    for a in &all_actions {
        for j in 0..ACTION_DIM {
            mean[j] += a[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; ACTION_DIM];
    for a in &all_actions {
        for j in 0..ACTION_DIM {
            var[j] += (a[j] - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-8)).collect();

    let kept = episodes.len();
    let total_pairs = episodes.iter().map(|e| e.pairs.len()).sum();
    let dataset = Dataset {
        horizon,
        obs_dim: OBS_DIM,
        action_dim: ACTION_DIM,
        stats: NormStats { mean, std },
        episodes,
    };
    let summary = GenSummary {
        episodes_run: n_episodes,
        episodes_kept: kept,
        total_pairs,
        mean_episode_ticks: total_ticks as f64 / kept as f64,
    };
    Ok((dataset, summary))
}

// --- binary container ----------------------------------------------------
//
// Layout (all integers and floats little-endian):
//   magic            4 bytes  "RTCD"
//   version          u32      currently 1
//   horizon          u32
//   obs_dim          u32
//   action_dim       u32
//   n_episodes       u64
//   mean             action_dim x f64
//   std              action_dim x f64
//   per episode:
//     n_pairs        u64
//     per pair:      obs_dim x f64, then horizon*action_dim x f64 row-major

const MAGIC: &[u8; 4] = b"RTCD";
const VERSION: u32 = 1;

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.horizon as u32).to_le_bytes())?;
    w.write_all(&(dataset.obs_dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.action_dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.episodes.len() as u64).to_le_bytes())?;
    for v in dataset.stats.mean.iter().chain(&dataset.stats.std) {
        w.write_all(&v.to_le_bytes())?;
    }
    for ep in &dataset.episodes {
        w.write_all(&(ep.pairs.len() as u64).to_le_bytes())?;
        for (obs, chunk) in &ep.pairs {
            for v in &obs.features {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in chunk.as_tensor().data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", version)));
    }
    let horizon = read_u32(&mut r)? as usize;
    let obs_dim = read_u32(&mut r)? as usize;
    let action_dim = read_u32(&mut r)? as usize;
    let n_episodes = read_u64(&mut r)? as usize;
    if horizon == 0 || obs_dim == 0 || action_dim == 0 {
        return Err(Error::Format("dataset header has zero dimensions".into()));
    }
    let mean = read_f64s(&mut r, action_dim)?;
    let std = read_f64s(&mut r, action_dim)?;

    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let n_pairs = read_u64(&mut r)? as usize;
        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let obs = Observation::new(read_f64s(&mut r, obs_dim)?);
            let data = read_f64s(&mut r, horizon * action_dim)?;
            let chunk = ActionChunk::new(Tensor::from_vec(vec![horizon, action_dim], data)?)?;
            pairs.push((obs, chunk));
        }
        episodes.push(Demo { pairs, success: true });
    }
    Ok(Dataset { horizon, obs_dim, action_dim, stats: NormStats { mean, std }, episodes })
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

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnvConfig::default();
        let (d1, _) = gen_dataset(&cfg, 3, 8, 42).unwrap();
        let (d2, _) = gen_dataset(&cfg, 3, 8, 42).unwrap();
        assert_eq!(d1.episodes.len(), d2.episodes.len());
        for (e1, e2) in d1.episodes.iter().zip(&d2.episodes) {
            assert_eq!(e1.pairs.len(), e2.pairs.len());
            for ((o1, c1), (o2, c2)) in e1.pairs.iter().zip(&e2.pairs) {
                assert_eq!(o1.features, o2.features);
                assert_eq!(c1.as_tensor().data(), c2.as_tensor().data());
            }
        }
    }

    #[test]
    fn chunk_rows_are_the_executed_actions() {
        let cfg = EnvConfig::default();
        let (ds, _) = gen_dataset(&cfg, 4, 8, 7).unwrap();
        for ep in &ds.episodes {
            let ticks = ep.pairs.len();
            // Row i of the chunk at tick t equals row 0 of the chunk at
            // tick t+i, away from the padded tail.
            for t in 0..ticks {
                for i in 0..8 {
                    if t + i < ticks {
                        assert_eq!(ep.pairs[t].1.row(i), ep.pairs[t + i].1.row(0));
                    } else {
                        // Padding holds the final action.
                        assert_eq!(ep.pairs[t].1.row(i), ep.pairs[ticks - 1].1.row(0));
                    }
                }
            }
        }
    }

    #[test]
    fn overlap_identity_holds_across_consecutive_chunks() {
        let cfg = EnvConfig::default();
        let (ds, _) = gen_dataset(&cfg, 3, 8, 11).unwrap();
        for ep in &ds.episodes {
            for t in 0..ep.pairs.len() - 1 {
                for i in 0..7 {
                    if t + 1 + i < ep.pairs.len() {
                        assert_eq!(ep.pairs[t].1.row(i + 1), ep.pairs[t + 1].1.row(i));
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_actions_have_unit_stats() {
        let cfg = EnvConfig::default();
        let (ds, _) = gen_dataset(&cfg, 16, 8, 13).unwrap();
        // Normalize every executed action (row 0 of each chunk) and
        // recompute the statistics.
        let mut rows: Vec<[f64; 2]> = Vec::new();
        for ep in &ds.episodes {
            for (_, chunk) in &ep.pairs {
                let mut out = [0.0; 2];
                ds.stats.normalize_row(chunk.row(0), &mut out);
                rows.push(out);
            }
        }
        let n = rows.len() as f64;
        for j in 0..2 {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let std: f64 =
                (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 0.05, "dim {} mean {}", j, mean);
            assert!((0.9..=1.1).contains(&std), "dim {} std {}", j, std);
        }
    }

    #[test]
    fn file_round_trip_preserves_bytes() {
        let cfg = EnvConfig::default();
        let (ds, _) = gen_dataset(&cfg, 2, 8, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.rtcd");
        let p2 = dir.path().join("b.rtcd");
        write_dataset(&ds, &p1).unwrap();
        let loaded = read_dataset(&p1).unwrap();
        write_dataset(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = EnvConfig::default();
        let (ds, _) = gen_dataset(&cfg, 2, 8, 19).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.rtcd");
        write_dataset(&ds, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
    }
}
