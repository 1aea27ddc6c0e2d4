//! `oracle`: preprocess logs, train, generate and evaluate daily activity plans.

mod commands;
mod config;
mod mask;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oracle_core::ingest::SynthProfile;
use oracle_core::WdMode;

use config::{Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "oracle", version, about = "Daily activity plan generation")]
struct Cli {
    /// TOML run config; flags given here take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed; falls back to the config file, then ORACLE_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Plausibility rules file (default: the built-in table).
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build train/val/test datasets from raw logs or synthetic days.
    Prep(PrepArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Sample plans from a checkpoint.
    Generate(GenerateArgs),
    /// Score generated days against a reference set.
    Eval(EvalArgs),
    /// Nearest-training-day distances for generated days.
    Knn(KnnArgs),
    /// Plan text, attention maps and latent means for a dataset.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct PrepArgs {
    /// Raw annotated log; repeatable.
    #[arg(long)]
    raw: Vec<PathBuf>,
    /// Use N synthetic days instead of raw logs.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    profile: Option<SynthProfile>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Continue from a checkpoint written by `train`.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    contrastive_weight: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tries: Option<usize>,
    #[arg(long)]
    mining_pool: Option<usize>,
    /// Train without the contrastive term.
    #[arg(long)]
    no_contrastive: bool,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// 0 decodes greedily.
    #[arg(long)]
    temperature: Option<f64>,
    /// Pin a span, e.g. "23:00-24:00=Sleep"; repeatable.
    #[arg(long)]
    fix: Vec<String>,
    /// Condition on each day of this dataset instead of using --fix.
    #[arg(long)]
    condition_on: Option<PathBuf>,
    /// Share of bins left free with --condition-on.
    #[arg(long)]
    masked_fraction: Option<f64>,
    /// Redraw implausible samples up to N times.
    #[arg(long)]
    reject_implausible: Option<u32>,
    /// Also write one HH:MM~HH:MM plan file per sample.
    #[arg(long)]
    plans: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Generated dataset; repeat for several rounds.
    #[arg(long)]
    generated: Vec<PathBuf>,
    /// Reference dataset.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Training dataset, for the memorization check.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    wd_mode: Option<WdMode>,
}

#[derive(Debug, Args)]
struct KnnArgs {
    #[arg(long)]
    generated: Vec<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Dataset to export.
    #[arg(long)]
    data: Option<PathBuf>,
    /// With a checkpoint, also dump attention maps and latent means.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Day whose attention is dumped (default: the first).
    #[arg(long)]
    day: Option<String>,
    /// Condition used for the attention dump; repeatable.
    #[arg(long)]
    fix: Vec<String>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, v: Vec<T>) {
    if !v.is_empty() {
        *slot = v;
    }
}

impl Cli {
    fn apply(self, cfg: &mut RunConfig) -> Command {
        set_opt(&mut cfg.paths.out, self.out);
        set_opt(&mut cfg.paths.rules, self.rules);
        match self.command {
            Command::Prep(ref a) => {
                set_vec(&mut cfg.paths.raw, a.raw.clone());
                set_opt(&mut cfg.prep.synthetic, a.synthetic);
                set(&mut cfg.prep.profile, a.profile);
            }
            Command::Train(ref a) => {
                set_opt(&mut cfg.paths.train, a.train.clone());
                set_opt(&mut cfg.paths.resume, a.resume.clone());
                let m = &mut cfg.model;
                set(&mut m.preset, a.preset);
                set_opt(&mut m.hidden, a.hidden);
                set_opt(&mut m.latent, a.latent);
                set_opt(&mut m.layers, a.layers);
                set_opt(&mut m.heads, a.heads);
                set_opt(&mut m.dropout, a.dropout);
                set_opt(&mut m.kl_weight, a.kl_weight);
                set_opt(&mut m.contrastive_weight, a.contrastive_weight);
                let t = &mut cfg.train;
                set(&mut t.epochs, a.epochs);
                set(&mut t.batch_size, a.batch_size);
                set(&mut t.lr, a.lr);
                set(&mut t.tries, a.tries);
                set(&mut t.mining_pool, a.mining_pool);
                if a.no_contrastive {
                    t.contrastive = false;
                }
            }
            Command::Generate(ref a) => {
                set_opt(&mut cfg.paths.checkpoint, a.checkpoint.clone());
                set_opt(&mut cfg.paths.condition_on, a.condition_on.clone());
                let g = &mut cfg.generate;
                set(&mut g.count, a.count);
                set(&mut g.temperature, a.temperature);
                set_vec(&mut g.fix, a.fix.clone());
                set(&mut g.masked_fraction, a.masked_fraction);
                set(&mut g.reject_implausible, a.reject_implausible);
                if a.plans {
                    g.plans = true;
                }
            }
            Command::Eval(ref a) => {
                set_vec(&mut cfg.paths.generated, a.generated.clone());
                set_opt(&mut cfg.paths.against, a.against.clone());
                set_opt(&mut cfg.paths.train, a.train.clone());
                set(&mut cfg.eval.k, a.k);
                set(&mut cfg.eval.wd_mode, a.wd_mode);
            }
            Command::Knn(ref a) => {
                set_vec(&mut cfg.paths.generated, a.generated.clone());
                set_opt(&mut cfg.paths.train, a.train.clone());
                set(&mut cfg.eval.k, a.k);
            }
            Command::Export(ref a) => {
                set_opt(&mut cfg.paths.data, a.data.clone());
                set_opt(&mut cfg.paths.checkpoint, a.checkpoint.clone());
                set_opt(&mut cfg.export.day, a.day.clone());
                set_vec(&mut cfg.export.fix, a.fix.clone());
            }
        }
        self.command
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed;
    let command = cli.apply(&mut cfg);
    let seed = cfg.resolve_seed(seed)?;
    match command {
        Command::Prep(_) => commands::prep(&mut cfg, seed),
        Command::Train(_) => commands::train(&mut cfg, seed),
        Command::Generate(_) => commands::generate(&mut cfg, seed),
        Command::Eval(_) => commands::eval(&mut cfg),
        Command::Knn(_) => commands::knn(&mut cfg),
        Command::Export(_) => commands::export(&mut cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
