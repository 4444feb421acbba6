use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gradguess_harness::experiments::{biastoy, cosine, onestep, replications, subspace, svdpower, sweep, train};
use gradguess_harness::output::Output;
use gradguess_harness::{Context, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "gradguess", version, about = "Gradient-guessing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; built-in defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides run.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// `section.field=value`, repeatable; applied after the config file.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train every method in train.methods.
    Train,
    /// Per-epoch single-guess cosines along a backprop trajectory.
    Cosine,
    /// Cosine against replicate count on single examples.
    Replications,
    /// One-step loss reduction and the slerp-control training comparison.
    Onestep,
    /// PCA against random subspace alignment of activation gradients.
    Subspace,
    /// Toy-chain bias and the W^T covariance law.
    Biastoy,
    /// SVD-power W^T training across powers.
    Svdpower,
    /// Methods × optimizers × learning rates.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Cosine => "cosine",
            Command::Replications => "replications",
            Command::Onestep => "onestep",
            Command::Subspace => "subspace",
            Command::Biastoy => "biastoy",
            Command::Svdpower => "svdpower",
            Command::Sweep => "sweep",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("run.seed={s}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("run.out={:?}", o.display().to_string()));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("run.threads={t}"));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let threads = cfg.run.threads;
    if threads > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = Output::create(&cfg)?;
    log::info!("{} run {} -> {}", cli.command.name(), out.run_id, out.dir.display());
    let ctx = Context::new(cfg)?;
    let o = Some(&out);
    match cli.command {
        Command::Train => drop(train::run(&ctx, o)?),
        Command::Cosine => drop(cosine::run(&ctx, o)?),
        Command::Replications => drop(replications::run(&ctx, o)?),
        Command::Onestep => drop(onestep::run(&ctx, o)?),
        Command::Subspace => drop(subspace::run(&ctx, o)?),
        Command::Biastoy => drop(biastoy::run(&ctx, o)?),
        Command::Svdpower => drop(svdpower::run(&ctx, o)?),
        Command::Sweep => drop(sweep::run(&ctx, o)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
