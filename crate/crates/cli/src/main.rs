//! `famae`: config-driven synthesis, pretraining, fine-tuning, ablation,
//! mismatch and attention-export runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid config, 3 missing
//! artifact.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use famae::pipeline::{self, DataRole, MismatchMode, RunConfig};
use famae::Error;

#[derive(Parser, Debug)]
#[command(name = "famae", version, about = "Frequency-aware masked autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON run config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to `output_dir/<command>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value` override, repeatable. Values are parsed as JSON
    /// where possible.
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Start from the desk-scale presets instead of the full-size defaults.
    #[arg(long)]
    desk: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Role {
    Pretrain,
    Target,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Substitution,
    Dropout,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset bundle.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Which configured data source to generate.
        #[arg(long, value_enum, default_value = "target")]
        target: Role,
    },
    /// Pretrain with latent masked autoencoding.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune and evaluate; without a checkpoint trains from scratch.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrain and fine-tune over the ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Modality substitution or dropout experiment.
    Mismatch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `mismatch.mode`.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Export channel-level attention of the second encoder.
    Attn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn resolve(common: &Common, command: &str, extra: &[String]) -> Result<(RunConfig, PathBuf), Error> {
    let mut sets = Vec::new();
    if let Some(s) = common.seed {
        sets.push(format!("seed={s}"));
    }
    sets.extend(extra.iter().cloned());
    sets.extend(common.set.iter().cloned());
    let base = match (&common.config, common.desk) {
        (Some(p), _) => {
            if !p.exists() {
                return Err(Error::Missing(p.clone()));
            }
            std::fs::read_to_string(p)?
        }
        (None, true) => serde_json::to_string(&RunConfig::desk())?,
        (None, false) => "{}".to_string(),
    };
    let cfg = RunConfig::from_json(Some(&base), &sets)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.join(command));
    Ok((cfg, out))
}

fn require(path: &Option<PathBuf>) -> Result<Option<&Path>, Error> {
    match path {
        Some(p) if !p.exists() => Err(Error::Missing(p.clone())),
        Some(p) => Ok(Some(p.as_path())),
        None => Ok(None),
    }
}

fn print_rows(rows: &[famae::harness::ResultRow]) {
    for r in rows {
        let delta = r.delta_accuracy.map(|d| format!(" delta {d:+.4}")).unwrap_or_default();
        println!(
            "{} {} seed {}: acc {:.4} prec {:.4} rec {:.4} f1 {:.4}{delta}",
            r.experiment, r.variant, r.seed, r.accuracy, r.precision, r.recall, r.f1
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common, target } => {
            let (cfg, out) = resolve(&common, "synth", &[])?;
            let role = match target {
                Role::Pretrain => DataRole::Pretrain,
                Role::Target => DataRole::Target,
            };
            println!("{}", pipeline::cmd_synth(&cfg, role, &out)?);
            println!("wrote {}", out.display());
        }
        Command::Pretrain { common } => {
            let (cfg, out) = resolve(&common, "pretrain", &[])?;
            let ck = pipeline::cmd_pretrain(&cfg, &out)?;
            println!("wrote {}", ck.display());
        }
        Command::Finetune { common, checkpoint } => {
            let (cfg, out) = resolve(&common, "finetune", &[])?;
            print_rows(&pipeline::cmd_finetune(&cfg, require(&checkpoint)?, &out)?);
        }
        Command::Ablate { common } => {
            let (cfg, out) = resolve(&common, "ablate", &[])?;
            print_rows(&pipeline::cmd_ablate(&cfg, &out)?);
        }
        Command::Mismatch { common, checkpoint, mode } => {
            let extra: Vec<String> = mode
                .map(|m| {
                    let m = match m {
                        Mode::Substitution => MismatchMode::Substitution,
                        Mode::Dropout => MismatchMode::Dropout,
                    };
                    vec![format!("mismatch.mode={}", serde_json::to_string(&m).unwrap())]
                })
                .unwrap_or_default();
            let (cfg, out) = resolve(&common, "mismatch", &extra)?;
            print_rows(&pipeline::cmd_mismatch(&cfg, require(&checkpoint)?, &out)?);
        }
        Command::Attn { common, checkpoint } => {
            let (cfg, out) = resolve(&common, "attn", &[])?;
            if !checkpoint.exists() {
                return Err(Error::Missing(checkpoint));
            }
            let m = pipeline::cmd_attn(&cfg, &checkpoint, &out)?;
            let c = (m.len() as f64).sqrt() as usize;
            for row in m.chunks(c.max(1)) {
                println!("{}", row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Missing(_) => 3,
        Error::Config(_)
        | Error::BandAboveNyquist { .. }
        | Error::InvalidMaskRatio(_)
        | Error::UnknownChannel(_)
        | Error::TooManyChannels { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
