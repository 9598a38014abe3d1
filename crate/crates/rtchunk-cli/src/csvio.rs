use crate::sweep::{CellResult, SweepResult};
use anyhow::{bail, Context, Result};
use rtchunk_core::executor::Strategy;
use std::path::Path;

pub const CSV_HEADER: &str = "strategy,d,s,n,successes,rate,wilson_lo,wilson_hi,mean_ticks,\
sem_ticks,mean_switch_jump,mean_within_jump,fwd_passes,vjp_passes,seed_base";

/// Render the sweep result as CSV text. Numbers use shortest round-trip
/// formatting, so equal results give byte-identical files.
pub fn to_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.strategy.label(),
            c.delay,
            c.exec_horizon,
            c.n,
            c.successes,
            c.rate,
            c.wilson_lo,
            c.wilson_hi,
            c.mean_ticks,
            c.sem_ticks,
            c.mean_switch_jump,
            c.mean_within_jump,
            c.fwd_passes,
            c.vjp_passes,
            c.seed_base,
        ));
    }
    out
}

pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(result))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<SweepResult> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        bail!("unexpected CSV header: {header}");
    }
    let mut cells = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            bail!("row {} has {} fields, expected 15", i + 2, f.len());
        }
        let strategy = Strategy::parse(f[0]).map_err(|e| anyhow::anyhow!("row {}: {}", i + 2, e))?;
        cells.push(CellResult {
            strategy,
            delay: f[1].parse()?,
            exec_horizon: f[2].parse()?,
            n: f[3].parse()?,
            successes: f[4].parse()?,
            rate: f[5].parse()?,
            wilson_lo: f[6].parse()?,
            wilson_hi: f[7].parse()?,
            mean_ticks: f[8].parse()?,
            sem_ticks: f[9].parse()?,
            mean_switch_jump: f[10].parse()?,
            mean_within_jump: f[11].parse()?,
            fwd_passes: f[12].parse()?,
            vjp_passes: f[13].parse()?,
            seed_base: f[14].parse()?,
        });
    }
    Ok(SweepResult { cells })
}

pub fn read_csv(path: &Path) -> Result<SweepResult> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(strategy: Strategy, d: usize) -> CellResult {
        CellResult {
            strategy,
            delay: d,
            exec_horizon: d.max(1),
            n: 16,
            successes: 12,
            rate: 0.75,
            wilson_lo: 0.505,
            wilson_hi: 0.898,
            mean_ticks: 61.25,
            sem_ticks: 3.5,
            mean_switch_jump: 0.101,
            mean_within_jump: 0.09,
            fwd_passes: 10.0,
            vjp_passes: 0.0,
            seed_base: 42,
        }
    }

    #[test]
    fn csv_round_trips() {
        let result = SweepResult {
            cells: vec![cell(Strategy::NaiveAsync, 0), cell(Strategy::TrainingTimeRtc, 4)],
        };
        let text = to_csv(&result);
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed.cells, result.cells);
        assert_eq!(to_csv(&parsed), text);
    }

    #[test]
    fn row_count_matches_cells() {
        let result = SweepResult {
            cells: (0..5).map(|d| cell(Strategy::Synchronous, d)).collect(),
        };
        let text = to_csv(&result);
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(parse_csv("foo,bar\n1,2\n").is_err());
    }
}
