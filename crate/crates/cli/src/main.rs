use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use replaykit::data::ProtocolId;
use replaykit::harness::{
    emit_report, format_summary, grid_search, replicate, run_raw_buffer, summary_table, Cadence, DatasetRef,
    ExperimentConfig, Grid, RunKind, RunResult,
};
use replaykit::methods::{Method, MethodConfig};
use replaykit::buffer::BufferSnapshot;
use replaykit::par::ExecMode;
use replaykit::{Error, Result};

/// Replay-based continual learning experiments.
#[derive(Parser)]
#[command(name = "replaykit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a method over a task protocol and report its evaluation matrix.
    Run(Overrides),
    /// Run every point of the config's "grid" and flag the best one.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Joint training, raw sequential training, or raw-buffer training.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        /// Buffer snapshot (CSV, JSON or binary) for `--kind rb`.
        #[arg(long)]
        buffer: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Jt,
    Rt,
    Rb,
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Task protocol: D1_10, D2_5, D5_2 or D10_1.
    #[arg(long)]
    task: Option<String>,
    /// IDX directory, or `synthetic`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    buffer_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    /// Record a row after every mini-batch.
    #[arg(long)]
    per_batch: bool,
    /// Evaluate on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn dataset_ref(spec: &str) -> DatasetRef {
    if spec == "synthetic" {
        DatasetRef::Synthetic {
            classes: 10,
            per_class: 200,
            dim: 32,
            separation: 0.6,
            seed: 0,
        }
    } else {
        DatasetRef::Idx {
            path: spec.into(),
            subsample: None,
        }
    }
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.dataset) {
            (Some(path), _) => ExperimentConfig::from_json(&read_text(path)?)?,
            (None, Some(d)) => ExperimentConfig::new(dataset_ref(d), ProtocolId::D5_2, MethodConfig::default()),
            (None, None) => return Err(Error::Config("give --config or --dataset".into())),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = dataset_ref(d);
        }
        if let Some(m) = &self.method {
            let method: Method = m.parse()?;
            if method != cfg.method.method {
                cfg.method.method = method;
                cfg.method.selection_strategy = None;
            }
        }
        if let Some(t) = &self.task {
            cfg.protocol = t.parse()?;
        }
        let m = &mut cfg.method;
        m.buffer_size = self.buffer_size.unwrap_or(m.buffer_size);
        m.epochs = self.epochs.unwrap_or(m.epochs);
        m.batch_size = self.batch_size.unwrap_or(m.batch_size);
        m.learning_rate = self.lr.unwrap_or(m.learning_rate);
        m.seed = self.seed.unwrap_or(m.seed);
        cfg.replications = self.replications.unwrap_or(cfg.replications);
        if self.output.is_some() {
            cfg.output.clone_from(&self.output);
        }
        if self.per_batch {
            cfg.cadence = Cadence::PerBatch;
        }
        if self.sequential {
            cfg.exec = ExecMode::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finish(results: &[RunResult], output: Option<&Path>) -> Result<()> {
    print!("{}", format_summary(&summary_table(results)));
    if let Some(dir) = output {
        let files = emit_report(results, dir)?;
        println!("wrote {} files to {}", files.len(), dir.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let data = cfg.dataset.load()?;
            let (results, _) = replicate(&cfg, &data, RunKind::Method)?;
            finish(&results, cfg.output.as_deref())
        }
        Command::Grid { config, output } => {
            let (mut base, grid) = Grid::from_config_json(&read_text(&config)?)?;
            if output.is_some() {
                base.output = output;
            }
            let data = base.dataset.load()?;
            let results = grid_search(&base, &grid, &data)?;
            finish(&results, base.output.as_deref())
        }
        Command::Baseline { kind, buffer, overrides } => {
            let cfg = overrides.resolve()?;
            let data = cfg.dataset.load()?;
            let results = match kind {
                BaselineKind::Jt => replicate(&cfg, &data, RunKind::JointTraining)?.0,
                BaselineKind::Rt => replicate(&cfg, &data, RunKind::RawTask)?.0,
                BaselineKind::Rb => {
                    let path = buffer.ok_or_else(|| Error::Config("--kind rb needs --buffer".into()))?;
                    let snapshot = BufferSnapshot::read(&path)?;
                    vec![run_raw_buffer(&cfg, &data, &snapshot)?]
                }
            };
            finish(&results, cfg.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
