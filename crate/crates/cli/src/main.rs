mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "seuda", version, about = "Semantic-aware unsupervised domain adaptation for 2-D segmentation")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; they override the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Flat TOML config file, or a report whose embedded config to reuse.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    working_size: Option<usize>,
    #[arg(long, global = true)]
    spacing_mm: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    lambda_sem: Option<f64>,
    #[arg(long, global = true)]
    pool_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic source and target phantom datasets.
    MakePhantoms {
        /// Phantom parameter file (flat TOML); defaults apply when omitted.
        #[arg(long)]
        phantoms: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the source segmenter.
    TrainSeg {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the image-translation model against a frozen segmenter.
    TrainUda {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Checkpoint file name under `checkpoints/`.
        #[arg(long, default_value = "uda.ckpt")]
        name: String,
    },
    /// Translate the target test split into the source appearance.
    Transform {
        #[arg(long)]
        uda: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score predicted masks against ground truth.
    Eval {
        /// Manifest whose mask column holds the predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Manifest whose mask column holds the ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "eval")]
        setting: String,
    },
    /// Run several experimental settings and tabulate them side by side.
    Bench {
        /// Comma-separated settings, e.g. `S-test,T-noDA,SeUDA`.
        #[arg(long, value_delimiter = ',')]
        settings: Vec<String>,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        uda: Option<PathBuf>,
        #[arg(long)]
        cyuda: Option<PathBuf>,
        /// Fine-tuned target model; trained on the fly when omitted.
        #[arg(long)]
        stl: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Repeat adaptation training under different seeds and report the spread.
    Stability {
        #[arg(long, default_value_t = 5)]
        n_runs: usize,
        /// Explicit seeds (overrides `--n-runs`).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5])]
        lambdas: Vec<f64>,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Overrides {
    fn resolve(&self, epochs: impl FnOnce(&mut RunConfig, usize)) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.working_size {
            c.working_size = v;
        }
        if let Some(v) = self.spacing_mm {
            c.spacing_mm = Some(v);
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.lambda_sem {
            c.lambda_sem = v;
        }
        if let Some(v) = self.pool_size {
            c.pool_size = v;
        }
        if let Some(v) = self.epochs {
            epochs(&mut c, v);
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let o = &cli.overrides;
    let uda_epochs = |c: &mut RunConfig, e| c.uda_epochs = e;
    match cli.command {
        Command::MakePhantoms { phantoms, out_dir } => commands::make_phantoms(phantoms.as_deref(), &out_dir, o),
        Command::TrainSeg { source, out_dir } => {
            let c = o.resolve(|c, e| c.seg_epochs = e)?;
            commands::train_seg(&c, &source, &out_dir)
        }
        Command::TrainUda { source, target, segmenter, out_dir, name } => {
            let c = o.resolve(uda_epochs)?;
            commands::train_uda(&c, &source, &target, &segmenter, &out_dir, &name)
        }
        Command::Transform { uda, target, out_dir } => {
            let c = o.resolve(uda_epochs)?;
            commands::transform(&c, &uda, &target, &out_dir)
        }
        Command::Eval { pred, gt, out_dir, setting } => {
            let c = o.resolve(uda_epochs)?;
            commands::eval(&c, &pred, &gt, &out_dir, &setting)
        }
        Command::Bench { settings, source, target, segmenter, uda, cyuda, stl, out_dir } => {
            let c = o.resolve(|c, e| c.stl_epochs = e)?;
            let artifacts = commands::BenchArtifacts {
                source,
                target,
                segmenter,
                uda,
                cyuda,
                stl,
            };
            commands::bench(&c, &settings, &artifacts, &out_dir)
        }
        Command::Stability { n_runs, seeds, lambdas, source, target, segmenter, out_dir } => {
            let c = o.resolve(uda_epochs)?;
            let seeds = if seeds.is_empty() { (0..n_runs as u64).map(|i| c.seed + i).collect() } else { seeds };
            commands::stability(&c, &seeds, &lambdas, &source, &target, &segmenter, &out_dir)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<seuda::Error>(), Some(seuda::Error::NonFinite { .. })));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
