use anyhow::{bail, Result};
use rtchunk_core::executor::RolloutRecord;

/// Jump statistics of one rollout: L2 distance between consecutive
/// executed actions, split by whether the later action is the first of a
/// freshly switched-in chunk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityMetrics {
    pub max_jump: f64,
    pub mean_jump_at_switch: f64,
    pub mean_jump_within_chunk: f64,
    pub switch_jumps: usize,
    pub within_jumps: usize,
}

pub fn continuity_metric(record: &RolloutRecord) -> Result<ContinuityMetrics> {
    if record.switch_ticks.is_empty() {
        bail!("continuity metric needs at least one chunk switch");
    }
    let mut switch_sum = 0.0;
    let mut switch_n = 0usize;
    let mut within_sum = 0.0;
    let mut within_n = 0usize;
    let mut max_jump: f64 = 0.0;
    for t in 1..record.executed.len() {
        let a = record.executed[t - 1];
        let b = record.executed[t];
        let jump = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if record.switch_ticks.contains(&t) {
            switch_sum += jump;
            switch_n += 1;
            max_jump = max_jump.max(jump);
        } else {
            within_sum += jump;
            within_n += 1;
        }
    }
    Ok(ContinuityMetrics {
        max_jump,
        mean_jump_at_switch: if switch_n > 0 { switch_sum / switch_n as f64 } else { 0.0 },
        mean_jump_within_chunk: if within_n > 0 { within_sum / within_n as f64 } else { 0.0 },
        switch_jumps: switch_n,
        within_jumps: within_n,
    })
}
