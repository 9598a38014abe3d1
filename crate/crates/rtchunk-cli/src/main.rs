use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rtchunk_cli::csvio::{read_csv, write_csv};
use rtchunk_cli::plot::write_svg;
use rtchunk_cli::sweep::{sweep, CheckpointPair, SRule, SweepSpec};
use rtchunk_core::envkit::{gen_dataset, read_dataset, write_dataset, EnvConfig};
use rtchunk_core::executor::Strategy;
use rtchunk_core::guidance::GuidanceConfig;
use rtchunk_core::trainer::{
    load_checkpoint, save_checkpoint, train, DelayDistribution, TrainConfig,
};
use std::path::{Path, PathBuf};

/// Real-time action chunking benchmark: train flow policies with and
/// without prefix conditioning and measure solve rate against inference
/// delay across execution strategies.
#[derive(Parser)]
#[command(name = "rtchunk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an expert demonstration dataset.
    GenData(GenDataArgs),
    /// Train a policy checkpoint from a dataset.
    Train(TrainArgs),
    /// Run one (strategy, delay) evaluation and print the aggregate row.
    Eval(EvalArgs),
    /// Run a full delay-vs-strategy sweep and write CSV + SVG.
    Sweep(SweepArgs),
    /// Regenerate the SVG chart from a sweep CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Episodes to roll out (only successful ones are kept).
    #[arg(long, default_value_t = 256)]
    episodes: usize,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Environment config TOML (defaults otherwise).
    #[arg(long)]
    env_config: Option<PathBuf>,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Training config TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    token_mixing: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train with prefix conditioning (requires --delay-dist).
    #[arg(long)]
    conditioned: bool,
    /// Delay distribution: `uniform:D_MAX` or `geometric:BASE:D_MAX`.
    #[arg(long)]
    delay_dist: Option<String>,
    /// Checkpoint to fine-tune from.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Also save the parameters as of this epoch (1-based).
    #[arg(long)]
    snapshot_epoch: Option<usize>,
    /// Where to save the snapshot checkpoint.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: RolloutArgs,
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    delay: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: RolloutArgs,
    /// Comma-separated delays.
    #[arg(long, default_value = "0,1,2,3,4")]
    delays: String,
    /// Comma-separated strategies.
    #[arg(long, default_value = "synchronous,naive_async,inference_time_rtc,training_time_rtc")]
    strategies: String,
    /// Output directory; falls back to $RTCHUNK_OUT_DIR, then `.`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Basename for <name>.csv and <name>.svg.
    #[arg(long, default_value = "sweep")]
    name: String,
}

#[derive(Args)]
struct RolloutArgs {
    /// Checkpoint trained without prefix conditioning.
    #[arg(long)]
    unconditioned: PathBuf,
    /// Checkpoint trained with prefix conditioning (defaults to the
    /// unconditioned one, which is only valid for d = 0 cells).
    #[arg(long)]
    conditioned: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    rollouts: usize,
    /// Execution-horizon rule: `max_d_1` or a fixed integer.
    #[arg(long, default_value = "max_d_1")]
    s_rule: String,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    #[arg(long, default_value_t = 10)]
    num_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, default_value_t = 140)]
    max_ticks: usize,
    /// Guidance scale for inference-time RTC.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Soft-mask decay base.
    #[arg(long, default_value_t = 0.5)]
    decay_c: f64,
    /// Clip on the guidance coefficient.
    #[arg(long, default_value_t = 5.0)]
    gamma_max: f64,
    /// Environment config TOML (defaults otherwise).
    #[arg(long)]
    env_config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "solve rate vs inference delay")]
    title: String,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Plot(args) => run_plot(args),
    }
}

fn load_env_config(path: &Option<PathBuf>) -> Result<EnvConfig> {
    match path {
        None => Ok(EnvConfig::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let env_cfg = load_env_config(&args.env_config)?;
    let (dataset, summary) = gen_dataset(&env_cfg, args.episodes, args.horizon, args.seed)?;
    write_dataset(&dataset, &args.out)?;
    println!(
        "kept {}/{} episodes, {} chunk pairs (mean episode {:.1} ticks)",
        summary.episodes_kept, summary.episodes_run, summary.total_pairs,
        summary.mean_episode_ticks
    );
    println!(
        "action stats: mean [{:.4}, {:.4}] std [{:.4}, {:.4}]",
        dataset.stats.mean[0], dataset.stats.mean[1], dataset.stats.std[0], dataset.stats.std[1]
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_delay_dist(text: &str) -> Result<DelayDistribution> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["uniform", d_max] => Ok(DelayDistribution::UniformInt { d_max: d_max.parse()? }),
        ["geometric", base, d_max] => Ok(DelayDistribution::GeometricWeights {
            base: base.parse()?,
            d_max: d_max.parse()?,
        }),
        _ => bail!("delay distribution must be `uniform:D_MAX` or `geometric:BASE:D_MAX`"),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let dataset = read_dataset(&args.data)?;
    let mut config = match &args.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml_str(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.width {
        config.width = v;
    }
    if let Some(v) = args.depth {
        config.depth = v;
    }
    if let Some(v) = args.token_mixing {
        config.token_mixing = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if args.conditioned {
        config.conditioned = true;
    }
    if let Some(text) = &args.delay_dist {
        config.delay_dist = Some(parse_delay_dist(text)?);
    }
    if let Some(v) = args.snapshot_epoch {
        config.snapshot_epoch = Some(v);
    }
    if let Some(p) = &args.warm_start {
        config.warm_start_path = Some(p.display().to_string());
    }

    let warm = match &config.warm_start_path {
        Some(p) => Some(load_checkpoint(Path::new(p))?),
        None => None,
    };
    let out = train(&config, &dataset, warm.as_ref())?;
    println!(
        "trained {} epochs ({} gradient steps): eval loss {:.4} -> {:.4}",
        config.epochs,
        out.checkpoint.meta.gradient_steps,
        out.loss_curve.first().unwrap(),
        out.loss_curve.last().unwrap()
    );
    save_checkpoint(&out.checkpoint, &args.out)?;
    println!("wrote {}", args.out.display());
    if let Some(snap) = &out.snapshot {
        let path = args
            .snapshot_out
            .clone()
            .unwrap_or_else(|| args.out.with_extension("snapshot.rtck"));
        save_checkpoint(snap, &path)?;
        println!("wrote snapshot {}", path.display());
    }
    Ok(())
}

fn build_spec(common: &RolloutArgs, delays: Vec<usize>, strategies: Vec<Strategy>) -> Result<SweepSpec> {
    Ok(SweepSpec {
        delays,
        strategies,
        n_rollouts: common.rollouts,
        s_rule: SRule::parse(&common.s_rule)?,
        horizon: common.horizon,
        num_steps: common.num_steps,
        seed_base: common.seed_base,
        max_ticks: common.max_ticks,
        guidance: GuidanceConfig {
            beta: common.beta,
            decay_c: common.decay_c,
            gamma_max: common.gamma_max,
            num_steps: common.num_steps,
        },
    })
}

fn run_cells(common: &RolloutArgs, spec: &SweepSpec) -> Result<rtchunk_cli::sweep::SweepResult> {
    let env_cfg = load_env_config(&common.env_config)?;
    let unconditioned = load_checkpoint(&common.unconditioned)?;
    let conditioned = match &common.conditioned {
        Some(p) => load_checkpoint(p)?,
        None => unconditioned.clone(),
    };
    let pair = CheckpointPair { unconditioned: &unconditioned, conditioned: &conditioned };
    sweep(spec, &pair, &env_cfg)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let strategy = Strategy::parse(&args.strategy)?;
    let spec = build_spec(&args.common, vec![args.delay], vec![strategy])?;
    let result = run_cells(&args.common, &spec)?;
    let c = &result.cells[0];
    println!(
        "{} d={} s={}: rate {:.4} [{:.4}, {:.4}] over {} rollouts",
        c.strategy.label(),
        c.delay,
        c.exec_horizon,
        c.rate,
        c.wilson_lo,
        c.wilson_hi,
        c.n
    );
    println!(
        "episode ticks {:.1} +/- {:.2}; switch jump {:.4} vs within {:.4}; per chunk fwd {:.1} vjp {:.1}",
        c.mean_ticks, c.sem_ticks, c.mean_switch_jump, c.mean_within_jump, c.fwd_passes,
        c.vjp_passes
    );
    Ok(())
}

fn out_dir(cli: &Option<PathBuf>) -> PathBuf {
    cli.clone()
        .or_else(|| std::env::var_os("RTCHUNK_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let delays: Vec<usize> = args
        .delays
        .split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad delay `{s}`")))
        .collect::<Result<_>>()?;
    let strategies: Vec<Strategy> = args
        .strategies
        .split(',')
        .map(|s| Strategy::parse(s.trim()).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let spec = build_spec(&args.common, delays, strategies)?;
    let result = run_cells(&args.common, &spec)?;

    let dir = out_dir(&args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join(format!("{}.csv", args.name));
    let svg_path = dir.join(format!("{}.svg", args.name));
    write_csv(&result, &csv_path)?;
    write_svg(&result, "solve rate vs inference delay", &svg_path)?;
    for c in &result.cells {
        println!(
            "{:>20} d={} s={}: {:.4} [{:.4}, {:.4}]",
            c.strategy.label(),
            c.delay,
            c.exec_horizon,
            c.rate,
            c.wilson_lo,
            c.wilson_hi
        );
    }
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn run_plot(args: PlotArgs) -> Result<()> {
    let result = read_csv(&args.csv)?;
    write_svg(&result, &args.title, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
