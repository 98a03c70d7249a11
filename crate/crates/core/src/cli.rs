//! `revpref` command line: generate | detect | estimate | evaluate | montecarlo.
//!
//! Each command resolves its configuration from defaults, then the matching
//! table of the optional `--config` TOML file, then flags. Exit codes: 0 ok,
//! 2 configuration or input error, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::afriat::{coordination_test, naive_estimate, proximity, reconstruct_utilities};
use crate::error::Error;
use crate::eval::{self, Model, MonteCarloConfig, MonteCarloReport};
use crate::forward::{generate_dataset, sample_probe, stream, GenConfig, UtilitySpec};
use crate::robust::{exchange_loop, MasterOptions, RobustOptions};
use crate::types::{validate_dataset, AmbiguityConfig, Dataset, ParameterVector};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "revpref", version, about = "Revealed-preference detection and robust utility estimation")]
struct Cli {
    /// TOML file with one table per command; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic coordinated dataset and its noisy observation.
    Generate(GenerateArgs),
    /// Test for coordination and report the proximity statistic.
    Detect(DetectArgs),
    /// Estimate Afriat parameters, naively or robustly.
    Estimate(EstimateArgs),
    /// Reconstruction error of an estimate against known utilities.
    Evaluate(EvaluateArgs),
    /// Naive vs robust comparison over many generated datasets.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Naive,
    Robust,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    #[arg(long = "M")]
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[arg(long = "N")]
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_clean: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_noisy: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateConfig {
    seed: u64,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    sigma: f64,
    preset: Option<Preset>,
    out_clean: Option<PathBuf>,
    out_noisy: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { seed: 0, t: 5, m: 3, n: 2, sigma: 1.0, preset: None, out_clean: None, out_noisy: None }
    }
}

#[derive(Debug, Args, Serialize)]
struct DetectArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DetectConfig {
    data: Option<PathBuf>,
    report: Option<PathBuf>,
    lambda_min: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { data: None, report: None, lambda_min: AmbiguityConfig::default().lambda_min }
    }
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long = "R")]
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Convergence CSV; defaults to the output path with a `.trace.csv` suffix.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimateConfig {
    data: Option<PathBuf>,
    mode: Mode,
    epsilon: f64,
    delta: f64,
    #[serde(rename = "R")]
    radius: f64,
    max_iterations: usize,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let a = AmbiguityConfig::default();
        Self {
            data: None,
            mode: Mode::Robust,
            epsilon: a.epsilon,
            delta: a.delta,
            radius: a.radius,
            max_iterations: RobustOptions::default().max_iterations,
            out: None,
            trace: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Dataset the estimate was computed from.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Output of `estimate`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    /// JSON `{"specs": [...], "weights": [...]}` with the true utilities.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    fresh_probes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateConfig {
    data: Option<PathBuf>,
    estimate: Option<PathBuf>,
    preset: Option<Preset>,
    truth: Option<PathBuf>,
    grid: usize,
    fresh_probes: usize,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            data: None,
            estimate: None,
            preset: None,
            truth: None,
            grid: eval::DEFAULT_GRID,
            fresh_probes: eval::FRESH_PROBES,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct MonteCarloArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long = "R")]
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MonteCarloCliConfig {
    runs: usize,
    seed: u64,
    preset: Preset,
    #[serde(rename = "T")]
    t: usize,
    sigma: f64,
    epsilon: f64,
    delta: f64,
    #[serde(rename = "R")]
    radius: f64,
    grid: usize,
    out: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
}

impl Default for MonteCarloCliConfig {
    fn default() -> Self {
        let a = AmbiguityConfig::default();
        Self {
            runs: 100,
            seed: 0,
            preset: Preset::Paper,
            t: 5,
            sigma: 1.0,
            epsilon: a.epsilon,
            delta: a.delta,
            radius: a.radius,
            grid: eval::DEFAULT_GRID,
            out: None,
            trace_dir: None,
        }
    }
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = load_file(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Generate(a) => cmd_generate(resolve(&file, "generate", &a)?),
        Command::Detect(a) => cmd_detect(resolve(&file, "detect", &a)?),
        Command::Estimate(a) => cmd_estimate(resolve(&file, "estimate", &a)?),
        Command::Evaluate(a) => cmd_evaluate(resolve(&file, "evaluate", &a)?),
        Command::Montecarlo(a) => cmd_montecarlo(resolve(&file, "montecarlo", &a)?),
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            EXIT_NUMERIC
        }
    }
}

fn load_file(path: Option<&Path>) -> std::result::Result<toml::Table, Failure> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Defaults, overlaid by the file's `[section]`, overlaid by the flags that were given.
fn resolve<A: Serialize, C: DeserializeOwned + Serialize>(
    file: &toml::Table,
    section: &str,
    flags: &A,
) -> std::result::Result<C, Failure> {
    let mut table = match file.get(section) {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(config_err(format!("config entry `{section}` must be a table"))),
        None => toml::Table::new(),
    };
    let given = toml::Table::try_from(flags).map_err(|e| config_err(e.to_string()))?;
    table.extend(given);
    let cfg: C = table
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("[{section}] {}", e.message())))?;
    log::info!(
        "{section} config: {}",
        serde_json::to_string(&cfg).unwrap_or_default()
    );
    Ok(cfg)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    config_err(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &Value) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write_text(path, &text)
}

/// `body` with the schema version and resolved config added.
fn envelope<C: Serialize>(config: &C, body: Value) -> Value {
    let mut out = json!({ "schema_version": SCHEMA_VERSION, "config": config });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

fn load_dataset(path: Option<&Path>, cfg: &AmbiguityConfig) -> std::result::Result<Dataset, Failure> {
    let path = path.ok_or_else(|| config_err("--data is required"))?;
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let d = Dataset::from_json(&text).map_err(|e| io_err(path, e))?;
    validate_dataset(&d, cfg).map_err(|v| io_err(path, v))?;
    Ok(d)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| config_err(format!("{flag} is required")))
}

fn cmd_generate(cfg: GenerateConfig) -> CmdResult {
    if cfg.out_clean.is_none() && cfg.out_noisy.is_none() {
        return Err(config_err(
            "nothing to write\n\nUsage: revpref generate [--preset paper] [--seed <S>] [--T <T>] [--M <M>] [--N <N>] [--sigma <SIGMA>] --out-clean <PATH> --out-noisy <PATH>",
        ));
    }
    if cfg.preset == Some(Preset::Paper) && (cfg.m, cfg.n) != (3, 2) {
        return Err(config_err("the paper preset has M = 3 and N = 2"));
    }
    let gen = GenConfig { sigma: cfg.sigma, ..GenConfig::with_defaults(cfg.t, cfg.m, cfg.n, cfg.seed) };
    let out = generate_dataset(&gen)?;
    log::info!("generated T={} M={} N={}: {} clamped coordinates, max noise norm {:.4}", gen.t, gen.m, gen.n, out.clamped, out.max_noise_norm);
    let dataset_json = |d: &Dataset| {
        let body = serde_json::to_value(d).expect("datasets serialize");
        envelope(&cfg, body)
    };
    if let Some(p) = &cfg.out_clean {
        write_json(p, &dataset_json(&out.clean))?;
    }
    if let Some(p) = &cfg.out_noisy {
        write_json(p, &dataset_json(&out.noisy))?;
    }
    Ok(())
}

fn cmd_detect(cfg: DetectConfig) -> CmdResult {
    let amb = AmbiguityConfig { lambda_min: cfg.lambda_min, ..AmbiguityConfig::default() };
    amb.validate()?;
    let d = load_dataset(cfg.data.as_deref(), &amb)?;
    let test = coordination_test(&d, &amb)?;
    let prox = proximity(&d, &amb)?;
    let line = json!({ "coordinated": test.is_coordinated(), "phi": prox.phi });
    println!("{line}");
    if let Some(p) = &cfg.report {
        let body = json!({
            "coordinated": test.is_coordinated(),
            "phi": prox.phi,
            "test": test,
            "witness": prox.witness,
            "bisection": prox.steps,
        });
        write_json(p, &envelope(&cfg, body))?;
    }
    Ok(())
}

fn trace_csv(objective: &[f64], cv: &[f64]) -> String {
    let mut s = String::from("iteration,objective,cv\n");
    for (k, (obj, cv)) in objective.iter().zip(cv).enumerate() {
        let _ = writeln!(s, "{},{obj},{cv}", k + 1);
    }
    s
}

fn default_trace(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

fn cmd_estimate(cfg: EstimateConfig) -> CmdResult {
    let out = required(&cfg.out, "--out")?;
    if cfg.mode == Mode::Robust && !(cfg.epsilon > 0.0) {
        return Err(config_err("epsilon must be positive"));
    }
    let amb = AmbiguityConfig {
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        radius: cfg.radius,
        ..AmbiguityConfig::default()
    };
    if cfg.mode == Mode::Robust {
        amb.validate()?;
    }
    let d = load_dataset(cfg.data.as_deref(), &amb)?;
    match cfg.mode {
        Mode::Naive => {
            let (prox, psi) = naive_estimate(&d, &amb)?;
            let utilities = reconstruct_utilities(&psi, &d)?;
            let body = json!({ "mode": "naive", "phi": prox.phi, "psi": psi, "utilities": utilities });
            write_json(out, &envelope(&cfg, body))
        }
        Mode::Robust => {
            let opts = RobustOptions { master: MasterOptions::default(), max_iterations: cfg.max_iterations };
            let trace = cfg.trace.clone().unwrap_or_else(|| default_trace(out));
            match exchange_loop(&d, &amb, &opts) {
                Ok((psi, state)) => {
                    write_text(&trace, &trace_csv(&state.objective_trace, &state.cv_trace))?;
                    let utilities = reconstruct_utilities(&psi, &d)?;
                    let body = json!({
                        "mode": "robust",
                        "psi": psi,
                        "v": state.incumbent_v,
                        "objective": state.objective_trace.last(),
                        "cv": state.cv_trace.last(),
                        "iterations": state.iterations,
                        "utilities": utilities,
                    });
                    write_json(out, &envelope(&cfg, body))
                }
                Err(Error::IterationCapExceeded { cap, last_cv, state }) => {
                    write_text(&trace, &trace_csv(&state.objective_trace, &state.cv_trace))?;
                    Err(Failure::Numeric(format!(
                        "exchange loop hit the iteration cap of {cap} (last cv {last_cv}); trace written to {}",
                        trace.display()
                    )))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct Truth {
    specs: Vec<UtilitySpec>,
    weights: Vec<f64>,
}

fn cmd_evaluate(cfg: EvaluateConfig) -> CmdResult {
    let amb = AmbiguityConfig::default();
    let d = load_dataset(cfg.data.as_deref(), &amb)?;
    let est_path = required(&cfg.estimate, "--estimate")?;
    let text = fs::read_to_string(est_path).map_err(|e| io_err(est_path, e))?;
    let est: Value = serde_json::from_str(&text).map_err(|e| io_err(est_path, e))?;
    let psi: ParameterVector = serde_json::from_value(est.get("psi").cloned().unwrap_or(Value::Null))
        .map_err(|e| io_err(est_path, format!("no parameter vector: {e}")))?;
    let truth = match (&cfg.truth, cfg.preset) {
        (Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<Truth>(&text).map_err(|e| io_err(p, e))?
        }
        (None, Some(Preset::Paper)) => {
            let g = GenConfig::paper(0);
            Truth { specs: g.specs, weights: g.weights }
        }
        _ => return Err(config_err("give exactly one of --truth and --preset")),
    };
    if truth.specs.len() != d.m || truth.weights.len() != d.m {
        return Err(config_err("truth and dataset disagree on the number of agents"));
    }
    let estimate = reconstruct_utilities(&psi, &d)?;
    let mut probes = d.probes.clone();
    let mut rng = stream(cfg.seed, u64::MAX - 1);
    for _ in 0..cfg.fresh_probes {
        let g = GenConfig::with_defaults(1, 1, 1, 0);
        probes.push(sample_probe(&mut rng, d.n, g.probe_low, g.probe_high));
    }
    let error = eval::reconstruction_error(
        Model::Smooth { specs: &truth.specs, mu: &truth.weights },
        Model::Reconstructed(&estimate),
        &probes,
        cfg.grid,
    )?;
    let line = json!({ "error": error });
    println!("{line}");
    if let Some(p) = &cfg.out {
        write_json(p, &envelope(&cfg, json!({ "error": error, "probes": probes })))?;
    }
    Ok(())
}

fn summary_table(r: &MonteCarloReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "runs: {} ({} excluded)", r.runs, r.excluded);
    let _ = writeln!(s, "{:<10}{:>12}{:>12}", "method", "average", "worst");
    let _ = writeln!(s, "{:<10}{:>12.4}{:>12.4}", "naive", r.avg_error_naive, r.worst_error_naive);
    let _ = writeln!(s, "{:<10}{:>12.4}{:>12.4}", "robust", r.avg_error_robust, r.worst_error_robust);
    s
}

fn cmd_montecarlo(cfg: MonteCarloCliConfig) -> CmdResult {
    let out = required(&cfg.out, "--out")?;
    if !(cfg.epsilon > 0.0) {
        return Err(config_err("epsilon must be positive"));
    }
    let mc = MonteCarloConfig {
        generator: GenConfig { sigma: cfg.sigma, ..GenConfig::with_defaults(cfg.t, 3, 2, 0) },
        ambiguity: AmbiguityConfig {
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            radius: cfg.radius,
            ..AmbiguityConfig::default()
        },
        grid: cfg.grid,
        ..MonteCarloConfig::paper()
    };
    let report = eval::monte_carlo(cfg.runs, cfg.seed, &mc)?;
    if let Some(dir) = &cfg.trace_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for r in &report.records {
            let csv = trace_csv(&r.objective_trace, &r.cv_trace);
            write_text(&dir.join(format!("run_{:04}.csv", r.run)), &csv)?;
        }
    }
    write_json(out, &envelope(&cfg, serde_json::to_value(&report).expect("report serializes")))?;
    print!("{}", summary_table(&report));
    Ok(())
}
