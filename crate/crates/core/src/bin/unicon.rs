use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unicon::cli::{run_experiment, ExperimentConfig, Protocol, RunError};

#[derive(Parser)]
#[command(name = "unicon", version, about = "Split-learning simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a TOML config and write metrics to the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `dataset.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(
    config: PathBuf,
    seed: Option<u64>,
    protocol: Option<Protocol>,
    out: Option<PathBuf>,
) -> Result<(), RunError> {
    let mut cfg = ExperimentConfig::from_path(&config)?;
    if let Some(seed) = seed {
        cfg.dataset.seed = seed;
    }
    if let Some(p) = protocol {
        cfg.protocol = p;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    let summary = run_experiment(&cfg)?;
    let acc = summary.final_val_acc().unwrap_or(f64::NAN);
    println!(
        "{}: {} rounds, final val_acc {acc:.4}, gap {:.4} -> {:.4}, output in {}",
        cfg.protocol,
        summary.reports.len(),
        summary.first.gap(),
        summary.last.gap(),
        summary.out_dir.display()
    );
    for (name, digest) in &summary.checkpoints {
        println!("  {name} sha256 {digest}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run {
        config,
        seed,
        protocol,
        out,
    } = Args::parse().command;
    let shown = config.display().to_string();
    match run(config, seed, protocol, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let err = anyhow::Error::new(e).context(format!("run with {shown} failed"));
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
