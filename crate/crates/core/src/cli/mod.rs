//! Argument parsing, configuration, run manifests and exit codes.

mod commands;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use choicelab::analysis::OutputFormat;
use choicelab::estimation::{EstimationConfig, GridConfig, RefineConfig};
use choicelab::harness::BackendConfig;
use choicelab::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "choicelab", version, about = "Revealed-preference analysis and chat-model choice experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// TOML file with optional [grid], [refine] and [backend] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate optimal choices of disappointment-averse subjects.
    Simulate(commands::SimulateArgs),
    /// Compute consistency indices and parameter estimates per subject.
    Analyze(commands::AnalyzeArgs),
    /// Run chat-model sessions and collect the parsed choices.
    Experiment(commands::ExperimentArgs),
    /// Regress recovered parameters on the truth for each sample size.
    LearningCurve(commands::LearningCurveArgs),
    /// Summary panels and plot data from index reports.
    Report(commands::ReportArgs),
    /// Re-run the command recorded in a manifest with its configuration snapshot.
    Replay(commands::ReplayArgs),
}

/// Contents of `--config`. Every table and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub refine: RefineConfig,
    pub backend: BackendConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.estimation().validate()?;
        Ok(cfg)
    }

    pub fn estimation(&self) -> EstimationConfig {
        EstimationConfig {
            grid: self.grid.clone(),
            refine: self.refine.clone(),
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Success,
    /// Input or I/O failure outside the other categories.
    Failure,
    Validation,
    Backend,
    /// Outputs were written but some rows carry anomaly flags.
    Partial,
}

impl Exit {
    pub fn code(self) -> u8 {
        match self {
            Exit::Success => 0,
            Exit::Failure => 1,
            Exit::Validation => 2,
            Exit::Backend => 3,
            Exit::Partial => 4,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Backend(_) => Exit::Backend,
            Error::Io { .. } => Exit::Failure,
            _ => Exit::Validation,
        }
    }
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e.code())
    }
}

/// Record written next to the outputs of every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub exit: Exit,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Shared state of one command invocation.
pub struct Run {
    pub global: Global,
    pub config: Config,
    manifest: RunManifest,
}

impl Run {
    fn new(global: Global, config: Config, command: &str, args: Vec<String>) -> Result<Self> {
        std::fs::create_dir_all(&global.out)
            .map_err(|e| Error::Validation(format!("cannot create {}: {e}", global.out.display())))?;
        let manifest = RunManifest {
            command: command.into(),
            args,
            config: config.clone(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            started: now(),
            finished: String::new(),
            exit: Exit::Success,
        };
        Ok(Self { global, config, manifest })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.global.out.join(name)
    }

    /// Output path for a table in the selected format.
    pub fn table(&self, stem: &str) -> PathBuf {
        self.out(&format!("{stem}.{}", OutputFormat::from(self.global.format).extension()))
    }

    pub fn format(&self) -> OutputFormat {
        self.global.format.into()
    }

    pub fn seed(&mut self, name: &str, value: u64) -> u64 {
        self.manifest.seeds.insert(name.into(), value);
        value
    }

    pub fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.to_path_buf());
    }

    fn finish(mut self, exit: Exit) -> Result<()> {
        self.manifest.finished = now();
        self.manifest.exit = exit;
        let path = self.out(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| Error::Validation(format!("cannot write {}: {e}", path.display())))
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Analyze(_) => "analyze",
        Command::Experiment(_) => "experiment",
        Command::LearningCurve(_) => "learning-curve",
        Command::Report(_) => "report",
        Command::Replay(_) => "replay",
    }
}

pub fn run(cli: Cli) -> Result<Exit> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config = Config::load(cli.global.config.as_deref())?;
    execute(cli, config, args)
}

fn execute(cli: Cli, config: Config, args: Vec<String>) -> Result<Exit> {
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest);
    }
    let name = command_name(&cli.command);
    let mut run = Run::new(cli.global, config, name, args)?;
    if let Some(p) = run.global.config.clone() {
        run.input(&p);
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(&mut run, a),
        Command::Analyze(a) => commands::analyze(&mut run, a),
        Command::Experiment(a) => commands::experiment(&mut run, a),
        Command::LearningCurve(a) => commands::learning_curve_cmd(&mut run, a),
        Command::Report(a) => commands::report(&mut run, a),
        Command::Replay(_) => unreachable!(),
    };
    match result {
        Ok(exit) => {
            run.finish(exit)?;
            Ok(exit)
        }
        Err(e) => {
            let exit = Exit::from_error(&e);
            // Best effort: the original error matters more.
            let _ = run.finish(exit);
            Err(e)
        }
    }
}

fn replay(path: &Path) -> Result<Exit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let argv = std::iter::once("choicelab".to_string()).chain(manifest.args.iter().cloned());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::Validation(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Validation("a replay manifest cannot be replayed".into()));
    }
    execute(cli, manifest.config, manifest.args)
}
