use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use seqlab::compare::compare;
use seqlab::config::ExperimentConfig;
use seqlab::curve::export_curve;
use seqlab::dataset;
use seqlab::preprocess::preprocess;
use seqlab::run::run;
use seqlab::sweep::{summary_text, sweep};

#[derive(Parser)]
#[command(
    name = "seqlab",
    version,
    about = "Train and compare SASRec / BSARec sequential recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` in the config.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration per seed and record valid/test metrics.
    Run(Common),
    /// Train every grid point, select by validation NDCG@10, test the winners.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid points trained concurrently.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Tabulate test metrics of run or sweep directories with percent gains.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write comparison.txt and comparison.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a run's training curve with metadata header lines.
    ExportCurve {
        dir: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and filter the configured dataset into the canonical format.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &common.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out);
    Ok((cfg, out))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(common) => {
            let (cfg, out) = load(&common)?;
            let data = dataset::load(&cfg.dataset)?.data;
            for s in run(&cfg, &data, &out, common.force, common.quiet)? {
                if let Some(t) = &s.test {
                    println!("{}  (best epoch {})", t, s.best_epoch);
                }
                println!("wrote {}", s.dir.display());
            }
        }
        Command::Sweep { common, workers } => {
            let (cfg, out) = load(&common)?;
            let data = dataset::load(&cfg.dataset)?.data;
            for o in sweep(&cfg, &data, &out, workers, common.force, common.quiet)? {
                print!("{}", summary_text(&cfg, &o));
                println!("wrote {}", o.dir.display());
            }
        }
        Command::Compare { dirs, out } => {
            let report = compare(&dirs)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("comparison.txt"), &text)?;
                fs::write(out.join("comparison.csv"), report.to_csv())?;
            }
        }
        Command::ExportCurve { dir, out } => {
            let text = export_curve(&dir)?;
            match out {
                Some(p) => {
                    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{text}"),
            }
        }
        Command::Preprocess { config, out, force } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", preprocess(&cfg.dataset, &out, force)?);
        }
    }
    Ok(())
}
