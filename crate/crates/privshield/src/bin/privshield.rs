use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use privshield::runner::{self, out_dir};
use privshield::{report, Error, ExperimentConfig, Result};

/// Train privacy-preserving image encoders and attack them.
#[derive(Parser)]
#[command(name = "privshield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to PNGs and a manifest.
    Generate(Common),
    /// Train the encoder, classifier and training-time decoder.
    Train(Common),
    /// Attack a trained encoder and measure utility and privacy.
    Attack {
        #[command(flatten)]
        common: Common,
        /// `step_{n}` directory or encoder checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and attack over a list of λ₂ values.
    SweepLambda2(Common),
    /// Train and attack baseline and adversarial encoders at each tap.
    SweepLayers(Common),
    /// Merge finished runs into one table with plots.
    Report {
        /// Run directories, searched recursively for attack metrics.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = out_dir(&cfg, c.out.as_deref())?;
    cfg.validate()?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, out) = load(&c)?;
            let m = runner::cmd_generate(&cfg, &out)?;
            println!("{}", m.display());
        }
        Command::Train(c) => {
            let (cfg, out) = load(&c)?;
            let r = runner::cmd_train(&cfg, &out)?;
            println!("{}", r.checkpoint.display());
        }
        Command::Attack { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            if !checkpoint.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", checkpoint.display())));
            }
            let label = checkpoint.file_name().and_then(|n| n.to_str()).unwrap_or("attack").to_string();
            let m = runner::cmd_attack(&cfg, &checkpoint, &out, &label)?;
            println!("{}", MetricsLine(&m.metrics));
        }
        Command::SweepLambda2(c) => {
            let (cfg, out) = load(&c)?;
            for r in runner::cmd_sweep_lambda2(&cfg, &out)? {
                println!("lambda2={} mcc={:.3} face_sim={:.3}", r.lambda2, r.mean_mcc.mean, r.face_sim.mean);
            }
        }
        Command::SweepLayers(c) => {
            let (cfg, out) = load(&c)?;
            for r in runner::cmd_sweep_layers(&cfg, &out)? {
                println!("{} {} face_sim={:.3} lda={:.3}", r.tap, r.variant, r.face_sim.mean, r.lda_score.mean);
            }
        }
        Command::Report { runs, out } => {
            let r = report::cmd_report(&runs, &out)?;
            println!("{} runs, {} warnings", r.rows.len(), r.warnings.len());
        }
    }
    Ok(())
}

struct MetricsLine<'a>(&'a privshield_core::metrics::MetricsReport);

impl std::fmt::Display for MetricsLine<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = self.0;
        write!(f, "mcc={:.3} face_sim={:.3} feature_sim={:.3} ssim={:.3} psnr={:.2}", m.mean_mcc, m.face_sim, m.feature_sim, m.ssim, m.psnr)
    }
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

