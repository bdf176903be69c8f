use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use erd::eval::{MetricKind, MetricRecord};
use erd::exec::with_jobs;
use erd::experiment::commands;
use erd::experiment::{ExperimentConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "erd", version, about = "Incremental few-shot meta-learning with episodic replay distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a config value, e.g. `--set train.seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (from `data.synthetic`) to --out.
    GenSynth(Common),
    /// Write the task / meta-test class split to --out/split.json.
    Split(Common),
    /// Train and evaluate after every session.
    Train(Common),
    /// Evaluate a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model directory, e.g. `run/session_008/model`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate tasks 1..=SESSION (default: all tasks).
        #[arg(long)]
        session: Option<usize>,
    },
    /// One training run per value of a config axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// p, lambda_m, lambda_e, n_ex, bf, or any dotted config key.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn load(common: &Common) -> erd::Result<ExperimentConfig> {
    let env_seed = std::env::var(SEED_ENV).ok();
    ExperimentConfig::load(common.config.as_deref(), env_seed.as_deref(), &common.sets)
}

fn print_final(records: &[MetricRecord]) {
    let last = records.iter().map(|r| r.session).max().unwrap_or(0);
    for r in records.iter().filter(|r| r.session == last && r.metric != MetricKind::PerTaskAcc) {
        println!("session {} {}: {:.4} ± {:.4}", r.session, r.metric.as_str(), r.mean, r.ci95);
    }
}

fn run(cli: Cli) -> erd::Result<bool> {
    match cli.command {
        Command::GenSynth(c) => {
            let cfg = load(&c)?;
            commands::gen_synth(&cfg.data.synthetic, &c.out)?;
            println!("wrote {} classes to {}", cfg.data.synthetic.n_classes, c.out.display());
            Ok(true)
        }
        Command::Split(c) => {
            let cfg = load(&c)?;
            commands::split(&cfg, &c.out)?;
            println!("wrote {}", c.out.join(commands::SPLIT_FILE).display());
            Ok(true)
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let records = with_jobs(c.jobs, |exec| commands::train(&cfg, &c.out, exec))??;
            print_final(&records);
            Ok(true)
        }
        Command::Eval {
            common: c,
            checkpoint,
            session,
        } => {
            let cfg = load(&c)?;
            let records = with_jobs(c.jobs, |exec| commands::eval(&cfg, &checkpoint, session, &c.out, exec))??;
            print_final(&records);
            Ok(true)
        }
        Command::Sweep { common: c, axis, values } => {
            let cfg = load(&c)?;
            let rows = with_jobs(c.jobs, |exec| commands::sweep(&cfg, &axis, &values, &c.out, exec))??;
            let mut ok = true;
            for r in &rows {
                match (&r.outcome, r.final_seen()) {
                    (Err(e), _) => {
                        ok = false;
                        eprintln!("{axis}={}: failed: {e}", r.value);
                    }
                    (Ok(_), Some(seen)) => println!("{axis}={}: seen_mean {:.4} ± {:.4}", r.value, seen.mean, seen.ci95),
                    (Ok(_), None) => println!("{axis}={}: no metrics", r.value),
                }
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
