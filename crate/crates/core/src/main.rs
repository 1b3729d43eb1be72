use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use har_kit::config::{self, ExecutionMode, Overrides};
use har_kit::pipeline::{self, RunStatus, Summary, Workspace};
use har_kit::synthetic::{self, SyntheticSpec};
use har_kit::{HarError, Result};

/// Human activity recognition experiments on tri-axial accelerometer data.
#[derive(Parser)]
#[command(name = "har-kit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load recordings, split subjects and fit the normalizer.
    Prepare(RunArgs),
    /// Cut the prepared streams into labeled windows.
    Segment(RunArgs),
    /// Extract window features to CSV.
    Features(RunArgs),
    /// Train and score the random forest.
    TrainRf(RunArgs),
    /// Train the convolutional classifier from scratch.
    TrainSupervised(RunArgs),
    /// Pretext training of the encoder (resumes from epoch checkpoints).
    Pretrain(RunArgs),
    /// Train a classifier on a pretrained encoder.
    Evaluate(RunArgs),
    /// Run the configured pipeline end to end.
    Run(RunArgs),
    /// Summarize a finished output directory.
    Report {
        /// Output directory of a run.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long, short)]
        config: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Write a synthetic dataset in the MotionSense directory layout.
    Synth {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 24)]
        subjects: u32,
        #[arg(long, default_value_t = 20.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Preset name or path to a TOML config.
    #[arg(long, short)]
    config: String,
    /// Dataset directory (overrides `dataset`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Recompute every stage even if up to date.
    #[arg(long)]
    force: bool,
    /// Sequential kernels only.
    #[arg(long, conflicts_with = "fast")]
    deterministic: bool,
    /// Allow multi-threaded convolution.
    #[arg(long)]
    fast: bool,
}

impl RunArgs {
    fn workspace(&self) -> Result<Workspace> {
        let mode = if self.fast {
            Some(ExecutionMode::Fast)
        } else if self.deterministic {
            Some(ExecutionMode::Deterministic)
        } else {
            None
        };
        let overrides = Overrides {
            dataset: self.dataset.clone(),
            seed: self.seed,
            output_dir: self.output.clone(),
            mode,
        };
        let cfg = config::load(&self.config, &overrides)?;
        Workspace::open(cfg, self.force)
    }
}

fn print_summary(s: &Summary, dir: &std::path::Path) {
    let f1 = s.test_mean_f1.map_or("-".into(), |v| format!("{v:.4}"));
    println!(
        "{}: test mean F1 {f1} (epoch {}, config {}) -> {}",
        s.pipeline,
        s.best_epoch,
        s.config_hash,
        dir.display()
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let mut ws = a.workspace()?;
            let p = ws.prepare()?;
            let (tr, va, te) = p.split.sizes();
            println!("subjects: train {tr}, val {va}, test {te} -> {}", ws.path(pipeline::PREPARED_FILE).display());
        }
        Command::Segment(a) => {
            let mut ws = a.workspace()?;
            let w = ws.segment()?;
            println!(
                "windows: train {}, val {}, test {} -> {}",
                w.train.len(),
                w.val.len(),
                w.test.len(),
                ws.path(pipeline::WINDOWS_FILE).display()
            );
        }
        Command::Features(a) => {
            let mut ws = a.workspace()?;
            let [train, _, _] = ws.features()?;
            println!(
                "{} features per window ({}) -> {}",
                train.dim,
                train.schema.id(),
                ws.path("features").display()
            );
        }
        Command::TrainRf(a) => {
            let mut ws = a.workspace()?;
            let s = ws.train_rf()?;
            print_summary(&s, ws.dir());
        }
        Command::TrainSupervised(a) => {
            let mut ws = a.workspace()?;
            let s = ws.train_supervised()?;
            print_summary(&s, ws.dir());
        }
        Command::Pretrain(a) => {
            let mut ws = a.workspace()?;
            let ck = ws.pretrain()?;
            println!(
                "{} encoder after {} epochs -> {}",
                ck.task,
                ck.epoch,
                ws.path(pipeline::PRETRAINED_FILE).display()
            );
        }
        Command::Evaluate(a) => {
            let mut ws = a.workspace()?;
            let s = ws.evaluate()?;
            print_summary(&s, ws.dir());
        }
        Command::Run(a) => {
            let mut ws = a.workspace()?;
            match ws.run()? {
                RunStatus::Completed(s) => print_summary(&s, ws.dir()),
                RunStatus::UpToDate(s) => {
                    println!("up to date (use --force to recompute)");
                    print_summary(&s, ws.dir());
                }
            }
        }
        Command::Report { output } => print!("{}", pipeline::report(&output)?),
        Command::Validate { config: source, dataset } => {
            let cfg = config::load(
                &source,
                &Overrides {
                    dataset,
                    ..Default::default()
                },
            )?;
            println!("# config hash {}", cfg.hash());
            print!("{}", cfg.normalize());
        }
        Command::Synth {
            output,
            subjects,
            seconds,
            seed,
        } => {
            if subjects == 0 || !(seconds > 0.0) {
                return Err(HarError::InvalidArgument("need at least one subject and a positive duration".into()));
            }
            let spec = SyntheticSpec {
                subjects,
                seconds_per_trial: seconds,
                seed,
                ..Default::default()
            };
            synthetic::write_dataset(&output, &spec)?;
            println!("{subjects} synthetic subjects -> {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
