//! Command-line front end: argument model, config loading, dispatch and
//! output writers.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use qcausal::experiments::config::DEFAULT_OUTPUT_DIRECTORY;
use qcausal::experiments::{
    invariants::{checks_table, invariant_checks},
    model_catalog, run_emergence_experiment, run_profile, run_propagation_time_experiment,
    run_resolution_sweep, ExperimentConfig, OutputFormat, Provenance, ResultTable, Setup,
    SuiteScope, SCHEMA_VERSION,
};
use qcausal::hilbert::PhysicalConstants;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "QCAUSAL_OUTPUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Run(#[from] qcausal::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qcausal",
    version,
    about = "Action profiles and intermediate-measurement experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Output directory; overrides the config and the environment.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    /// Seed for randomized checks; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Suppress the summary.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// Experiment configuration (TOML, or JSON by extension).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Action profile, stationary points and overlap estimate.
    Profile(ConfigArg),
    /// Intermediate measurements over a list of resolutions.
    Sweep(ConfigArg),
    /// Least-action values against the classical oracle.
    Emerge(ConfigArg),
    /// Propagation times from windowed packets.
    Propagate(ConfigArg),
    /// Invariant suite.
    Verify {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Restrict to these modules.
        #[arg(long = "module", value_name = "NAME")]
        modules: Vec<String>,
    },
    /// Built-in models and their bases.
    Models,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Profile(_) => "profile",
            Command::Sweep(_) => "sweep",
            Command::Emerge(_) => "emerge",
            Command::Propagate(_) => "propagate",
            Command::Verify { .. } => "verify",
            Command::Models => "models",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::Profile(c)
            | Command::Sweep(c)
            | Command::Emerge(c)
            | Command::Propagate(c) => Some(&c.config),
            Command::Verify { config, .. } => config.as_deref(),
            Command::Models => None,
        }
    }
}

/// A configuration with defaults applied and the record of how.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub applied_defaults: Vec<String>,
    pub source: Option<PathBuf>,
    /// Value of [`OUTPUT_DIR_ENV`] at load time.
    pub environment_output: Option<String>,
}

/// Parses a config file without resolving it.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        ExperimentConfig::from_json(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| CliError::Config {
        path: path.display().to_string(),
        message,
    })
}

/// Reads, defaults and validates a configuration.
pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let cfg = parse_config(path)?;
    let mut loaded = finish_config(cfg, &GlobalArgs::default())?;
    loaded.source = Some(path.to_path_buf());
    Ok(loaded)
}

/// Applies command-line overrides, then the environment, then built-in
/// defaults.
pub fn finish_config(
    mut cfg: ExperimentConfig,
    global: &GlobalArgs,
) -> Result<LoadedConfig, CliError> {
    let mut applied = Vec::new();
    if let Some(seed) = global.seed {
        cfg.seed = Some(seed);
    }
    let output = cfg
        .output
        .get_or_insert(qcausal::experiments::OutputConfig {
            directory: None,
            format: None,
        });
    if let Some(dir) = &global.out {
        output.directory = Some(dir.display().to_string());
    }
    if let Some(f) = global.format {
        output.format = Some(f.into());
    }
    let environment_output = std::env::var(OUTPUT_DIR_ENV).ok().filter(|v| !v.is_empty());
    if output.directory.is_none() {
        if let Some(dir) = &environment_output {
            output.directory = Some(dir.clone());
            applied.push(format!("output.directory (from {OUTPUT_DIR_ENV})"));
        }
    }
    let (config, defaults) = cfg.resolve().map_err(|e| CliError::Config {
        path: "config".into(),
        message: e.to_string(),
    })?;
    applied.extend(defaults);
    Ok(LoadedConfig {
        config,
        applied_defaults: applied,
        source: None,
        environment_output,
    })
}

/// Where and how tables are written.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub format: OutputFormat,
}

impl OutputSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let out = cfg.output.as_ref();
        Self {
            directory: PathBuf::from(
                out.and_then(|o| o.directory.clone())
                    .unwrap_or_else(|| DEFAULT_OUTPUT_DIRECTORY.into()),
            ),
            format: out.and_then(|o| o.format).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub code_version: String,
    pub config_source: Option<String>,
    pub config: Value,
    pub applied_defaults: Vec<String>,
    pub environment: Value,
    pub constants: Value,
    pub provenance: Provenance,
    pub timings_seconds: Value,
    pub outputs: Vec<String>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes each table as `<name>.csv` and/or `<name>.json`. Returns the file
/// names written.
pub fn write_outputs(tables: &[ResultTable], spec: &OutputSpec) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(&spec.directory).map_err(io_error(&spec.directory))?;
    let mut written = Vec::new();
    for t in tables {
        let mut emit = |ext: &str, body: String| -> Result<(), CliError> {
            let name = format!("{}.{ext}", t.name);
            let path = spec.directory.join(&name);
            fs::write(&path, body).map_err(io_error(&path))?;
            written.push(name);
            Ok(())
        };
        if spec.format.csv() {
            emit("csv", t.to_csv())?;
        }
        if spec.format.json() {
            emit("json", t.to_json())?;
        }
    }
    Ok(written)
}

pub fn write_manifest(manifest: &Manifest, spec: &OutputSpec) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&spec.directory).map_err(io_error(&spec.directory))?;
    let path = spec.directory.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, body + "\n").map_err(io_error(&path))?;
    Ok(path)
}

/// Outcome of a successful dispatch.
#[derive(Debug, Clone)]
pub struct Report {
    /// 0 when every check passed, 1 otherwise.
    pub exit_code: i32,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn count_failures(table: &ResultTable, column: &str) -> usize {
    let Some(k) = table.columns.iter().position(|c| c == column) else {
        return 0;
    };
    table
        .rows
        .iter()
        .filter(|r| matches!(r[k], qcausal::experiments::Cell::Flag(false)))
        .count()
}

/// Runs one invocation. Errors map to exit status 2.
pub fn dispatch(cli: &Cli) -> Result<Report, CliError> {
    let started = Instant::now();
    let loaded = match cli.command.config_path() {
        Some(path) => {
            let mut l = finish_config(parse_config(path)?, &cli.global)?;
            l.source = Some(path.to_path_buf());
            Some(l)
        }
        None => None,
    };
    // `verify` and `models` run without a config; they still honour the
    // output flags through a qubit placeholder.
    let loaded = match loaded {
        Some(l) => l,
        None => finish_config(
            ExperimentConfig::new(qcausal::experiments::ModelConfig::Qubit),
            &cli.global,
        )?,
    };
    let cfg = &loaded.config;
    let seed = cfg.seed_or_default();
    let mut failures = 0;
    let mut lines = Vec::new();
    let setup_started = Instant::now();
    let (tables, constants) = match &cli.command {
        Command::Models => {
            let c = PhysicalConstants::default();
            let t = model_catalog(c)?;
            lines.push(format!("{} bases across built-in models", t.len()));
            (vec![t], c)
        }
        Command::Verify { modules, .. } => {
            let scope = SuiteScope::parse(modules)?;
            let checks = invariant_checks(&scope, seed);
            let failed: Vec<_> = checks.iter().filter(|c| !c.ok()).collect();
            failures = failed.len();
            lines.push(format!(
                "{} checks, {} failed, {} recorded",
                checks.len(),
                failures,
                checks.iter().filter(|c| !c.asserted).count()
            ));
            for c in &failed {
                lines.push(format!(
                    "FAIL {} ({}): {:e} {} {:e} {}",
                    c.name, c.module, c.metric, c.comparison, c.threshold, c.detail
                ));
            }
            let mut t = checks_table(&checks);
            t.provenance = Provenance::new(&cfg.canonical(), cfg.hbar.unwrap_or(1.0), seed);
            (vec![t], cfg.constants()?)
        }
        other => {
            let setup = Setup::new(cfg.clone())?;
            let tables = match other {
                Command::Profile(_) => run_profile(&setup)?,
                Command::Sweep(_) => vec![run_resolution_sweep(&setup)?],
                Command::Emerge(_) => {
                    let t = run_emergence_experiment(&setup)?;
                    failures = count_failures(&t, "pass");
                    lines.push(format!("{} rows, {} outside tolerance", t.len(), failures));
                    vec![t]
                }
                Command::Propagate(_) => vec![run_propagation_time_experiment(&setup)?],
                Command::Models | Command::Verify { .. } => unreachable!(),
            };
            (tables, setup.constants)
        }
    };
    let compute = setup_started.elapsed().as_secs_f64();
    let spec = OutputSpec::from_config(cfg);
    let written = write_outputs(&tables, &spec)?;
    for t in &tables {
        lines.push(format!("{}: {} rows", t.name, t.len()));
    }
    let provenance = tables
        .first()
        .map(|t| t.provenance.clone())
        .unwrap_or_default();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: cli.command.name().into(),
        code_version: qcausal::experiments::table::CODE_VERSION.into(),
        config_source: loaded.source.as_ref().map(|p| p.display().to_string()),
        config: serde_json::to_value(cfg).expect("config serializes"),
        applied_defaults: loaded.applied_defaults.clone(),
        environment: json!({ OUTPUT_DIR_ENV: loaded.environment_output }),
        constants: json!({ "hbar": constants.hbar }),
        provenance,
        timings_seconds: json!({
            "compute": compute,
            "total": started.elapsed().as_secs_f64(),
        }),
        outputs: written.clone(),
    };
    let manifest_path = write_manifest(&manifest, &spec)?;
    let mut files: Vec<PathBuf> = written.iter().map(|n| spec.directory.join(n)).collect();
    files.push(manifest_path);
    lines.push(format!(
        "wrote {} files to {}",
        files.len(),
        spec.directory.display()
    ));
    Ok(Report {
        exit_code: i32::from(failures > 0),
        summary: lines.join("\n"),
        files,
    })
}

/// Parses `args`, runs the command on a pool of `--jobs` workers and returns
/// the exit status. Output goes to `stdout`/`stderr`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(report) => {
            if !cli.global.quiet {
                println!("{}", report.summary);
            }
            report.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qcausal::experiments::{ModelConfig, OutputConfig};

    fn spin_with_directory(dir: Option<&str>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(ModelConfig::Spin { j: 3.0 });
        cfg.output = Some(OutputConfig {
            directory: dir.map(String::from),
            format: None,
        });
        cfg
    }

    #[test]
    fn flag_beats_config_directory() {
        let global = GlobalArgs {
            out: Some(PathBuf::from("flag")),
            format: Some(FormatArg::Json),
            seed: Some(9),
            ..GlobalArgs::default()
        };
        let loaded = finish_config(spin_with_directory(Some("config")), &global).unwrap();
        let spec = OutputSpec::from_config(&loaded.config);
        assert_eq!(spec.directory, PathBuf::from("flag"));
        assert_eq!(spec.format, OutputFormat::Json);
        assert_eq!(loaded.config.seed, Some(9));
    }

    #[test]
    fn config_directory_is_kept_without_flag() {
        let loaded =
            finish_config(spin_with_directory(Some("config")), &GlobalArgs::default()).unwrap();
        assert_eq!(
            OutputSpec::from_config(&loaded.config).directory,
            PathBuf::from("config")
        );
        assert!(!loaded
            .applied_defaults
            .iter()
            .any(|d| d.starts_with("output.directory")));
    }

    #[test]
    fn every_error_exits_with_two() {
        let errors = [
            CliError::Usage("x".into()),
            CliError::Config {
                path: "p".into(),
                message: "m".into(),
            },
            CliError::Run(qcausal::Error::NotApplicable("x".into())),
        ];
        assert!(errors.iter().all(|e| e.exit_code() == 2));
    }

    #[test]
    fn subcommands_require_config_except_verify_and_models() {
        assert!(Cli::try_parse_from(["qcausal", "sweep"]).is_err());
        assert!(Cli::try_parse_from(["qcausal", "models"]).is_ok());
        assert!(Cli::try_parse_from(["qcausal", "verify", "--module", "action"]).is_ok());
    }
}
