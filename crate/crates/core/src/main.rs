use std::path::PathBuf;
use std::process::ExitCode;

use ban::commands;
use ban::config::RunConfig;
use ban::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ban", version, about = "Boundary-aware detection on synthetic shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test splits.
    GenData(Common),
    /// Train a detector and write checkpoint.bin and loss.csv.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(Common),
    /// Write contribution tables, and the ablation grid if enabled.
    Analyze(Common),
    /// Write local activation heat maps for one proposal.
    Visualize(Common),
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory: the dataset root for gen-data, the run directory otherwise.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint to read.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Extra `key=value` override; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn resolve(c: &Common, out_key: &str) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = c.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &c.out {
        cfg.set(out_key, &o.to_string_lossy())?;
    }
    if let Some(p) = &c.checkpoint {
        cfg.set("checkpoint", &p.to_string_lossy())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let r = commands::cmd_gen_data(&resolve(&c, "data_dir")?)?;
            println!(
                "wrote {} train and {} test images to {}",
                r.train.image_ids.len(),
                r.test.image_ids.len(),
                r.dir.display()
            );
        }
        Command::Train(c) => {
            let r = commands::cmd_train(&resolve(&c, "out_dir")?)?;
            if let Some(last) = r.log.last() {
                println!("final loss {:.4} after {} iterations", last.loss_total, r.log.len());
            }
            println!("checkpoint {}", r.checkpoint.display());
        }
        Command::Eval(c) => {
            let cfg = resolve(&c, "out_dir")?;
            let summary = commands::cmd_eval(&cfg)?;
            print!("{}", summary.text(&cfg.class_names()?));
        }
        Command::Analyze(c) => {
            let cfg = resolve(&c, "out_dir")?;
            let r = commands::cmd_analyze(&cfg)?;
            print!("{}", r.contributions.classification_csv());
            if let Some(rows) = &r.ablation {
                print!("{}", commands::ablation_csv(rows));
            }
            for row in &r.contributions.omitted {
                println!("omitted row {row}: no regions");
            }
        }
        Command::Visualize(c) => {
            let r = commands::cmd_visualize(&resolve(&c, "out_dir")?)?;
            println!("class {}", r.class_id);
            for f in &r.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.detail().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
