//! `homsim`: run HOM simulation campaigns from a config file or a shipped preset.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hom_cli::{config::PRESETS, execute, load_config};

#[derive(Debug, Parser)]
#[command(name = "homsim", version, about = "HOM interferometry group-index simulator")]
struct Args {
    /// Run config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// List the shipped presets and exit.
    #[arg(long)]
    list_presets: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_presets {
        for (name, _) in PRESETS {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let result = load_config(args.config.as_deref(), args.preset.as_deref(), args.seed)
        .and_then(|cfg| execute(&cfg, Some(&args.out)));
    match result {
        Ok(summary) => {
            println!(
                "{:?} finished; summary in {} (config {})",
                summary.command,
                args.out.join("summary.json").display(),
                &summary.config_sha256[..12]
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
