//! Library behind the `agc` binary, so commands can be driven from tests.

pub mod args;
pub mod commands;
pub mod error;
pub mod rundir;

pub use args::{Cli, Command, GlobalArgs};
pub use error::{CliError, CliResult, ExitCode};

use agc_core::TrainConfig;

/// Reads the configuration (or the defaults) and applies flag overrides.
pub fn load_config(global: &GlobalArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &global.variant {
        cfg.variant = v.clone();
    }
    if let Some(s) = &global.stream {
        cfg.stream = s.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(&cli.global)?;
    let name = match &cli.command {
        Command::Train => "train",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::GenSynth => "gen-synth",
        Command::ExportAttention(_) => "export-attention",
    };
    let out = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| format!("runs/{name}-{}-seed{}", &cfg.hash()[..8], cfg.seed).into());
    match &cli.command {
        Command::Train => commands::train(&cfg, &out).map(|r| {
            println!("test accuracy {:.4}", r.test.accuracy);
        }),
        Command::Eval(a) => commands::eval(&cfg, &a.source, a.sample, &out).map(|e| {
            println!("accuracy {:.4}", e.accuracy);
        }),
        Command::Gradcheck(a) => commands::gradcheck(&cfg, a, &out).and_then(|r| {
            if r.passed {
                Ok(())
            } else {
                Err(CliError::numeric(format!(
                    "gradient check failed: worst relative error {:.3e} exceeds {:.1e}",
                    r.worst, a.tolerance
                )))
            }
        }),
        Command::GenSynth => commands::gen_synth(&cfg, &out).map(|_| ()),
        Command::ExportAttention(a) => commands::export_attention(&cfg, &a.source, a.sample, &out).map(|_| ()),
    }?;
    eprintln!("outputs in {}", out.display());
    Ok(())
}
