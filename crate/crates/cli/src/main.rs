use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memtraj_core::intention::DecodeMode;
use memtraj_core::pipeline::synth;
use memtraj_core::{Config, Error, Pipeline};

/// Memory-based multi-modal trajectory prediction.
#[derive(Parser, Debug)]
#[command(name = "memtraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the config `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Finetune each training stage at `finetune_lr` after its main pass.
    #[arg(long)]
    finetune: bool,
    /// Anchor decoding from the query's or the stored past feature.
    #[arg(long, value_name = "MODE")]
    decode_mode: Option<DecodeMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stage 1: train the social/intention encoders and the joint decoder.
    TrainFeatures(Common),
    /// Stage 2: encode the training set into a memory bank and filter it.
    BuildMemory(Common),
    /// Stage 3: train the memory addresser against the frozen bank.
    TrainAddresser(Common),
    /// Stage 4: train trajectory fulfillment.
    TrainFulfillment(Common),
    /// Predict K trajectories per scene.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Track TSV read as past-only windows (default: the `test` split).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Also write the addressed memory samples per scene to trace.csv.
        #[arg(long)]
        trace: bool,
        /// Score the bank with raw cosine instead of the learned addresser.
        #[arg(long)]
        fixed_cosine: bool,
    },
    /// Best-of-K evaluation on a split with ground-truth futures.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        fixed_cosine: bool,
    },
    /// Write synthetic multi-modal train/val/test splits and their manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: `<out_dir>/data`).
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<Config, Error> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if c.finetune {
        cfg.finetune = true;
    }
    if let Some(m) = c.decode_mode {
        cfg.decode_mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() {
    if let Some(n) = std::env::var("MEMTRAJ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("MEMTRAJ_THREADS ignored: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::TrainFeatures(c) => {
            let dir = Pipeline::new(load_config(&c)?)?.stage1_train_features()?;
            println!("features={}", dir.display());
        }
        Command::BuildMemory(c) => {
            let p = Pipeline::new(load_config(&c)?)?;
            p.stage2_build_memory()?;
            let bank = p.load_bank()?;
            println!("bank={}", p.bank_path().display());
            println!("entries={}", bank.len());
        }
        Command::TrainAddresser(c) => {
            let dir = Pipeline::new(load_config(&c)?)?.stage3_train_addresser()?;
            println!("addresser={}", dir.display());
        }
        Command::TrainFulfillment(c) => {
            let dir = Pipeline::new(load_config(&c)?)?.stage4_train_fulfillment()?;
            println!("fulfillment={}", dir.display());
        }
        Command::Predict {
            common,
            input,
            trace,
            fixed_cosine,
        } => {
            let p = Pipeline::new(load_config(&common)?)?;
            let out = p.predict(input.as_deref(), trace, fixed_cosine)?;
            println!("predictions={}", out.display());
        }
        Command::Eval {
            common,
            split,
            fixed_cosine,
        } => {
            let p = Pipeline::new(load_config(&common)?)?;
            let report = p.eval(&split, fixed_cosine)?;
            print!("{}", report.summary());
        }
        Command::Synth { common, dir } => {
            let cfg = load_config(&common)?;
            let dir = dir.unwrap_or_else(|| cfg.out_dir.join("data"));
            let manifest = synth(&cfg, &dir)?;
            println!("manifest={}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                Error::Dependency(_) => 3,
                _ => 1,
            })
        }
    }
}
