//! `beamsec`: command-line front end of the experiment harness.
//!
//! Exit codes: 0 success, 2 configuration or format error, 3 numerical
//! divergence, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamsec_core::harness::{self, pipeline, RunConfig};
use beamsec_core::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beamsec", version, about = "Beam prediction under adversarial attack and differential privacy")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build channels, codebook and dataset; write them with a manifest.
    Generate,
    /// Train the model for the configured case.
    Train,
    /// Evaluate a checkpoint clean and under the attack grid.
    AttackEval {
        /// Checkpoint to evaluate; defaults to the trained one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Adversarially train a checkpoint.
    Defend {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the full privacy/robustness sweep.
    Tradeoff,
    /// Turn a metrics CSV into plot-ready files.
    Report {
        /// Metrics CSV; defaults to `tradeoff.csv` in the output directory.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config <path> is required for this command".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn output_dir(cli: &Cli) -> Result<PathBuf> {
    match (&cli.out, &cli.config) {
        (Some(out), _) => Ok(out.clone()),
        (None, Some(_)) => Ok(load_config(cli)?.output_dir),
        (None, None) => Err(Error::Config("report needs --out or --config".into())),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(cli)?;
            let m = pipeline::generate_to(&cfg, &cfg.output_dir)?;
            println!("generated {} in {}", cfg.scenario.scenario_id, cfg.output_dir.display());
            for (name, hash) in &m.files {
                println!("  {name}  {hash}");
            }
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let model = pipeline::train_to(&cfg, &cfg.output_dir)?;
            for r in &model.history {
                println!(
                    "epoch {:>3}  loss {:.6}  train {:.6}  val {}",
                    r.epoch,
                    r.batch_loss,
                    r.train_mse,
                    r.val_mse.map_or("-".into(), |v| format!("{v:.6}"))
                );
            }
            if let Some(eps) = model.meta.dp_epsilon {
                println!("dp epsilon {eps:.4}");
            }
        }
        Command::AttackEval { checkpoint } => {
            let cfg = load_config(cli)?;
            let rows = pipeline::attack_eval_to(&cfg, &cfg.output_dir, checkpoint.as_deref())?;
            for r in &rows {
                println!(
                    "{:<18} {:<8} eps {:<6} mse {:.6}  acc {:.4}  ear {:.4}",
                    r.phase.name(),
                    r.attack,
                    r.eps,
                    r.mse,
                    r.top1_acc,
                    r.ear_mean
                );
            }
        }
        Command::Defend { checkpoint } => {
            let cfg = load_config(cli)?;
            let d = pipeline::defend_to(&cfg, &cfg.output_dir, checkpoint.as_deref())?;
            for r in &d.history {
                println!(
                    "round {:>2}  loss {:.6}  val clean {:.6}  val adv {:.6}",
                    r.round, r.train_loss, r.val_clean_mse, r.val_adv_mse
                );
            }
            println!("stopped: {:?}", d.stop);
        }
        Command::Tradeoff => {
            let cfg = load_config(cli)?;
            let rows = pipeline::tradeoff_to(&cfg, &cfg.output_dir)?;
            println!(
                "{} rows written to {}",
                rows.len(),
                cfg.output_dir.join(pipeline::TRADEOFF_FILE).display()
            );
        }
        Command::Report { metrics } => {
            let dir = output_dir(cli)?;
            let metrics = metrics.clone().unwrap_or_else(|| dir.join(pipeline::TRADEOFF_FILE));
            let r = harness::report_to(&metrics, &dir)?;
            println!(
                "report: {} ear/mse points, {} surface points, {} scatter points in {}",
                r.mse_vs_eps.len(),
                r.tradeoff_surface.len(),
                r.defense_scatter.len(),
                Path::new(&dir).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
