use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ovpano::config::RunConfig;
use ovpano::run;
use ovpano::{Error, Result};

/// Open-vocabulary panoptic segmentation of synthetic LiDAR scenes.
///
/// Any configuration key can be overridden with `--key=value`.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset into `data`.
    Gen {
        #[arg(long)]
        seed: u64,
    },
    /// Train a model into `out`.
    Train {
        #[arg(long)]
        seed: u64,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint and write report files into `out`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and score the five ablation rows.
    Ablate {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference gradient check of every loss term.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print the reports found in a run directory.
    Report { dir: Option<PathBuf> },
}

const FLAGS: &[&str] = &["config", "seed", "resume", "checkpoint", "instances", "tol", "help", "version"];

/// Splits `--key=value` configuration overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut keep = Vec::new();
    let mut overrides = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        let over = i > 0
            && a
                .strip_prefix("--")
                .and_then(|r| r.split_once('='))
                .is_some_and(|(k, _)| !FLAGS.contains(&k));
        if over {
            overrides.push(a[2..].to_string());
        } else {
            keep.push(a);
        }
    }
    (keep, overrides)
}

fn load_config(cli: &Cli, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    if let Some(s) = seed {
        cfg.seed = Some(s);
    }
    Ok(cfg)
}

fn execute(cli: Cli, overrides: Vec<String>) -> Result<ExitCode> {
    match &cli.command {
        Command::Gen { seed } => {
            let cfg = load_config(&cli, &overrides, Some(*seed))?;
            let m = run::gen(&cfg)?;
            println!(
                "wrote {} training and {} evaluation scenes to {}",
                m.core.train.len(),
                m.core.eval.len(),
                cfg.data.display()
            );
        }
        Command::Train { seed, resume } => {
            let cfg = load_config(&cli, &overrides, Some(*seed))?;
            let out = run::train_cmd(&cfg, resume.as_deref())?;
            let means = run::epoch_means(&out.log)?;
            if let (Some(first), Some(last)) = (means.first(), means.last()) {
                println!("epoch mean loss {first:.4} -> {last:.4}");
            }
            println!("step {} checkpoint {}", out.state.step, out.checkpoint.display());
        }
        Command::Eval { checkpoint } => {
            let cfg = load_config(&cli, &overrides, None)?;
            run::eval_cmd(&cfg, checkpoint)?;
            print!("{}", run::report_cmd(&cfg.out)?);
        }
        Command::Ablate { seed } => {
            let cfg = load_config(&cli, &overrides, *seed)?;
            run::ablate_cmd(&cfg, |name, s| {
                println!("{name}: PQ {:.2} PQ_N^Th {:.2} PQ_N^St {:.2}", 100.0 * s.pq, 100.0 * s.pq_novel_thing, 100.0 * s.pq_novel_stuff)
            })?;
            print!("{}", run::report_cmd(&cfg.out)?);
        }
        Command::Gradcheck { instances, tol } => {
            let checks = run::gradcheck_cmd(*instances, *tol)?;
            for c in &checks {
                println!(
                    "{:<7} max relative error {:.3e} (tol {:.0e}) {}",
                    c.name,
                    c.max_rel_error,
                    c.tol,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { dir } => {
            let cfg = load_config(&cli, &overrides, None)?;
            print!("{}", run::report_cmd(dir.as_deref().unwrap_or(&cfg.out))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match execute(cli, overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Core(ovpano_core::Error::Divergence { .. }) = e {
                eprintln!("the last good state was kept in the checkpoint");
            }
            ExitCode::FAILURE
        }
    }
}
