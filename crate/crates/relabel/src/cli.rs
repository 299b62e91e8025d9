//! `relabel` command line.
//!
//! Every stage subcommand works inside a run directory, reading and writing
//! the standard artifact names listed in [`crate::rundir`]. Exit codes: 0 on
//! success, 1 on usage errors, 2 when a stage fails.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::config;
use crate::error::Error;
use crate::io;
use crate::rundir::{self, Pipeline, RunDir, RunOutcome, Stage, StageStatus};
use crate::service::{self, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "relabel", version, about = "Train, flag, relabel and retrain text classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON). Defaults to the run directory's config.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding the stage artifacts.
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
    /// Rederive every seed in the config from this one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config value, e.g. `--set noise.rate=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus (or import one with --input).
    Generate {
        #[command(flatten)]
        common: Common,
        /// Dataset JSONL to use instead of the synthetic corpus.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Inject label noise into the corpus.
    Noise(Common),
    /// Split the pool into train and test.
    Split(Common),
    /// Train Model-A on the training split.
    TrainA(Common),
    /// Flag disagreements with Model-A and build the relabel queue.
    Flag(Common),
    /// Serve the relabel queue to human annotators.
    Serve {
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
        /// Accepted for symmetry with the other subcommands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Correction log. Defaults to the run directory's corrections.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Static UI bundle served at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Answer the relabel queue with the simulated oracle.
    OracleRelabel(Common),
    /// Merge the corrections into the pool.
    Merge(Common),
    /// Train Model-B on the corrected training split.
    TrainB(Common),
    /// Train Model-C on the corrected training split with Model-A's predictions injected.
    TrainC(Common),
    /// Print the test accuracy of the models present in the run directory.
    Eval(Common),
    /// Run every stage, resuming from the last intact one.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Pretty-print a report.json.
    Report {
        /// Report file. Defaults to the run directory's report.json.
        path: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Stage(other.to_string()),
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn pipeline(common: &Common, input: Option<PathBuf>) -> Result<Pipeline, Failure> {
    let path = match &common.config {
        Some(p) => p.clone(),
        None => {
            let p = common.run_dir.join(rundir::CONFIG);
            if !p.exists() {
                return Err(Failure::Usage(format!("no --config given and {} does not exist", p.display())));
            }
            p
        }
    };
    let cfg = config::load(&path, common.seed, &common.overrides).map_err(|e| match e {
        Error::Missing(p) => Failure::Usage(format!("config file {} not found", p.display())),
        other => Failure::from(other),
    })?;
    Ok(Pipeline::new(RunDir::new(&common.run_dir), cfg, input)?)
}

fn stage(common: &Common, stage: Stage, input: Option<PathBuf>) -> Result<(), Failure> {
    let mut p = pipeline(common, input)?;
    match p.run_stage(stage)? {
        StageStatus::Done => {
            for name in stage.outputs() {
                eprintln!("wrote {}", p.dir().path(name).display());
            }
            Ok(())
        }
        StageStatus::AwaitingCorrections => Err(Failure::Stage(format!(
            "annotator is human and {} does not exist; collect decisions with `relabel serve` first",
            p.dir().path(rundir::CORRECTIONS).display()
        ))),
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { common, input } => stage(&common, Stage::Generate, input),
        Command::Noise(c) => stage(&c, Stage::Noise, None),
        Command::Split(c) => stage(&c, Stage::Split, None),
        Command::TrainA(c) => stage(&c, Stage::TrainA, None),
        Command::Flag(c) => stage(&c, Stage::Flag, None),
        Command::OracleRelabel(c) => {
            let p = pipeline(&c, None)?;
            if !matches!(p.config().annotator, relabel_core::harness::AnnotatorConfig::Oracle(_)) {
                return Err(Failure::Usage("config annotator is not an oracle; use --set annotator.kind=oracle".into()));
            }
            drop(p);
            stage(&c, Stage::Annotate, None)
        }
        Command::Merge(c) => stage(&c, Stage::Merge, None),
        Command::TrainB(c) => stage(&c, Stage::TrainB, None),
        Command::TrainC(c) => stage(&c, Stage::TrainC, None),
        Command::Eval(c) => {
            let summary = pipeline(&c, None)?.evaluate()?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::Run { common, input } => {
            let mut p = pipeline(&common, input)?;
            match p.run()? {
                RunOutcome::Complete(report) => {
                    let path = p.dir().path(rundir::REPORT);
                    print!("{}", render_report(&serde_json::to_value(&report).expect("report serializes")));
                    eprintln!("wrote {}", path.display());
                    Ok(())
                }
                RunOutcome::AwaitingCorrections { queue, log } => {
                    eprintln!(
                        "relabel queue written to {}; serve it with `relabel serve --run-dir {}` and run again once {} holds the decisions",
                        queue.display(),
                        p.dir().root().display(),
                        log.display()
                    );
                    Ok(())
                }
            }
        }
        Command::Report { path, run_dir, config: _ } => {
            let path = path.unwrap_or_else(|| run_dir.join(rundir::REPORT));
            let report: Value = io::read_json(&path)?;
            print!("{}", render_report(&report));
            Ok(())
        }
        Command::Serve { run_dir, config: _, bind, log, ui_dir } => serve(&run_dir, bind, log, ui_dir),
    }
}

fn serve(run_dir: &Path, bind: SocketAddr, log: Option<PathBuf>, ui_dir: Option<PathBuf>) -> Result<(), Failure> {
    let dir = RunDir::new(run_dir);
    let queue = io::load_queue(&dir.path(rundir::QUEUE))?;
    let label_space = dir.label_space()?;
    let log = log.unwrap_or_else(|| dir.path(rundir::CORRECTIONS));
    let state = Arc::new(ServiceState::open(queue, label_space, &log)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Stage(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Failure::Stage(format!("bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::Stage(e.to_string()))?;
        let p = state.progress();
        println!("listening on http://{addr}");
        eprintln!("queue: {} items, {} already decided; log {}", p.total, p.done, log.display());
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service::serve(listener, state, ui_dir, shutdown).await.map_err(|e| Failure::Stage(e.to_string()))
    })
}

fn num(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Plain-text tables for a report. Numbers are printed exactly as they
/// appear in the JSON.
pub fn render_report(report: &Value) -> String {
    let mut out = String::new();
    let ds = &report["dataset"];
    out.push_str(&format!(
        "pool {}  train {}  test {}  classes {}\n",
        num(&ds["n_pool"]),
        num(&ds["n_train"]),
        num(&ds["n_test"]),
        num(&ds["num_classes"])
    ));
    out.push_str(&format!("\n{:<10} {:>10} {:>10} {:>10}\n", "", "train", "test", "total"));
    let rows = [("noise", &ds["injected_noise"]), ("flags", &ds["flags"])];
    for (name, v) in rows {
        out.push_str(&format!(
            "{:<10} {:>10} {:>10} {:>10}\n",
            name,
            num(&v["train"]),
            num(&v["test"]),
            num(&v["total"])
        ));
    }
    out.push_str(&format!(
        "\nqueue {}  corrections {}  labels changed {}  merged size {}\n",
        num(&ds["queue_len"]),
        num(&ds["corrections"]),
        num(&ds["labels_changed"]),
        num(&ds["merged_size"])
    ));
    let fm = &report["flag_metrics"];
    out.push_str(&format!("flag precision {}  recall {}\n", num(&fm["precision"]), num(&fm["recall"])));
    out.push_str(&format!("\n{:<6} {:>22} {:>22} {:>7}\n", "model", "corrected_test", "clean_test", "epochs"));
    for (name, key) in [("A", "model_a"), ("B", "model_b"), ("C", "model_c")] {
        let acc = &report["accuracy"][key];
        out.push_str(&format!(
            "{:<6} {:>22} {:>22} {:>7}\n",
            name,
            num(&acc["corrected_test"]),
            num(&acc["clean_test"]),
            num(&report["training"][key]["epochs_run"])
        ));
    }
    out
}
