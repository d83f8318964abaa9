//! Trial-by-trial execution of a design through a pluggable executor.
//!
//! Trials run strictly in ascending run order, one at a time. The built-in
//! executors are a synthetic response surface (for validating the pipeline)
//! and an external command (for real benchmarks). Failures surface with the
//! partial results collected so far, so a rerun executes only missing trials.

use std::collections::BTreeMap;
use std::io::Read;
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignMatrix, Trial};
use crate::effects::{ResultSet, Term};

/// Synthetic response surface: intercept plus ±1-coded term contributions
/// plus seeded Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<Term, f64>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

/// How to produce one response per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExecutorSpec {
    Simulated { model: ResponseModel },
    ExternalCommand {
        /// Command template; `{A}` placeholders expand to level labels.
        template: String,
        /// Seconds before a trial is killed and reported as failed.
        timeout_secs: f64,
    },
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("unresolved placeholder `{{{0}}}` in command template")]
    UnresolvedPlaceholder(String),
    #[error("model references alias `{0}` but the trial carries no coded value for it")]
    MissingCodedValue(char),
    #[error("noise_sd must be >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("timeout must be > 0 seconds, got {0}")]
    InvalidTimeout(f64),
    #[error("command exited with {status}; stderr: {stderr}")]
    CommandFailed { status: String, stdout: String, stderr: String },
    #[error("command exceeded the {0} s timeout")]
    TimedOut(f64),
    #[error("no number found in command output line `{0}`")]
    UnparseableOutput(String),
    #[error("command produced no output")]
    EmptyOutput,
    #[error("command produced a non-finite response")]
    NonFiniteOutput,
    #[error("failed to launch command: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("partial results include unknown run_order {0}")]
    UnknownRunOrder(u32),
    #[error("partial results carry unit `{found}`, design expects `{expected}`")]
    PartialUnitMismatch { expected: String, found: String },
    #[error("results CSV line {line}: {detail}")]
    CsvFormat { line: usize, detail: String },
    #[error("results CSV: run_order {0} appears more than once")]
    CsvDuplicate(u32),
}

/// Everything an executor may inspect about the trial at hand.
#[derive(Debug)]
pub struct TrialContext<'a> {
    pub run_order: u32,
    pub aliases: &'a [char],
    pub labels: &'a [String],
    pub coded: Option<&'a [i8]>,
}

/// A source of one response value per trial.
pub trait Executor {
    fn execute(&mut self, ctx: &TrialContext<'_>) -> Result<f64, RunnerError>;
}

/// A failed run, carrying whatever completed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub run_order: u32,
    pub partial: ResultSet,
    pub source: RunnerError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "trial at run_order {} failed after {} completed response(s): {}",
            self.run_order,
            self.partial.len(),
            self.source
        )
    }
}

impl std::error::Error for RunFailure {}

/// Evaluates the response surface at one coded point:
/// y = intercept + Σ coeff(T) · Π coded + ε, with ε reproducible per
/// (seed, trial_index).
pub fn simulate_response(
    model: &ResponseModel,
    coded: &BTreeMap<char, i8>,
    trial_index: u32,
) -> Result<f64, RunnerError> {
    if model.noise_sd < 0.0 {
        return Err(RunnerError::InvalidNoise(model.noise_sd));
    }
    let mut y = model.intercept;
    for (term, coeff) in &model.coefficients {
        let mut sign = 1i32;
        for &alias in term.aliases() {
            let c = coded
                .get(&alias)
                .copied()
                .ok_or(RunnerError::MissingCodedValue(alias))?;
            sign *= c as i32;
        }
        y += coeff * sign as f64;
    }
    if model.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(trial_index as u64);
        let normal = Normal::new(0.0, model.noise_sd).expect("sd checked above");
        y += normal.sample(&mut rng);
    }
    Ok(y)
}

/// Substitutes `{ALIAS}` placeholders and assembles the trial environment:
/// one `FACTOR_<ALIAS>` variable per factor plus `TRIAL_RUN_ORDER`.
pub fn render_command(
    template: &str,
    trial: &Trial,
    aliases: &[char],
) -> Result<(String, Vec<(String, String)>), RunnerError> {
    let mut rendered = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        rendered.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            None => {
                // Unterminated brace: kept literally.
                rendered.push('{');
                rest = after;
            }
            Some(close) => {
                let inner = &after[..close];
                let mut chars = inner.chars();
                let resolved = match (chars.next(), chars.next()) {
                    (Some(c), None) => aliases.iter().position(|&a| a == c),
                    _ => None,
                };
                match resolved {
                    Some(idx) => rendered.push_str(&trial.assignment[idx]),
                    None => return Err(RunnerError::UnresolvedPlaceholder(inner.to_string())),
                }
                rest = &after[close + 1..];
            }
        }
    }
    rendered.push_str(rest);

    let mut env: Vec<(String, String)> = aliases
        .iter()
        .zip(&trial.assignment)
        .map(|(a, label)| (format!("FACTOR_{a}"), label.clone()))
        .collect();
    env.push(("TRIAL_RUN_ORDER".to_string(), trial.run_order.to_string()));
    Ok((rendered, env))
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?").unwrap()
    })
}

/// First real number on the final non-empty line, per the output contract.
pub fn parse_command_output(stdout: &str) -> Result<f64, RunnerError> {
    let line = stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or(RunnerError::EmptyOutput)?;
    let m = number_pattern()
        .find(line)
        .ok_or_else(|| RunnerError::UnparseableOutput(line.to_string()))?;
    let value: f64 = m
        .as_str()
        .parse()
        .map_err(|_| RunnerError::UnparseableOutput(line.to_string()))?;
    if !value.is_finite() {
        return Err(RunnerError::NonFiniteOutput);
    }
    Ok(value)
}

fn drain_pipe<R: Read + Send + 'static>(pipe: Option<R>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = String::new();
        if let Some(mut pipe) = pipe {
            let _ = pipe.read_to_string(&mut buf);
        }
        buf
    })
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> std::io::Result<Option<std::process::ExitStatus>> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(None);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

struct SimulatedExecutor {
    model: ResponseModel,
}

impl Executor for SimulatedExecutor {
    fn execute(&mut self, ctx: &TrialContext<'_>) -> Result<f64, RunnerError> {
        let coded: BTreeMap<char, i8> = match ctx.coded {
            Some(coded) => ctx.aliases.iter().copied().zip(coded.iter().copied()).collect(),
            None => BTreeMap::new(),
        };
        simulate_response(&self.model, &coded, ctx.run_order)
    }
}

struct ExternalCommandExecutor {
    template: String,
    timeout: Duration,
    timeout_secs: f64,
    aliases: Vec<char>,
}

impl Executor for ExternalCommandExecutor {
    fn execute(&mut self, ctx: &TrialContext<'_>) -> Result<f64, RunnerError> {
        let trial = Trial {
            std_order: 0,
            run_order: ctx.run_order,
            replicate: 0,
            assignment: ctx.labels.to_vec(),
            coded: None,
        };
        let (rendered, env) = render_command(&self.template, &trial, &self.aliases)?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&rendered)
            .envs(env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdout = drain_pipe(child.stdout.take());
        let stderr = drain_pipe(child.stderr.take());
        let status = wait_with_timeout(&mut child, self.timeout)?;
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        match status {
            None => Err(RunnerError::TimedOut(self.timeout_secs)),
            Some(status) if !status.success() => Err(RunnerError::CommandFailed {
                status: status.to_string(),
                stdout: out,
                stderr: err,
            }),
            Some(_) => parse_command_output(&out),
        }
    }
}

impl ExecutorSpec {
    /// Instantiates the executor for a given design, validating the spec
    /// against the design's aliases up front.
    pub fn build(&self, design: &DesignMatrix) -> Result<Box<dyn Executor>, RunnerError> {
        let aliases = design.selection().aliases();
        match self {
            ExecutorSpec::Simulated { model } => {
                if model.noise_sd < 0.0 {
                    return Err(RunnerError::InvalidNoise(model.noise_sd));
                }
                for term in model.coefficients.keys() {
                    if let Some(&alias) = term.aliases().iter().find(|a| !aliases.contains(a)) {
                        return Err(RunnerError::MissingCodedValue(alias));
                    }
                }
                Ok(Box::new(SimulatedExecutor { model: model.clone() }))
            }
            ExecutorSpec::ExternalCommand { template, timeout_secs } => {
                if !(*timeout_secs > 0.0) {
                    return Err(RunnerError::InvalidTimeout(*timeout_secs));
                }
                // Surface template problems before any trial runs.
                if let Some(first) = design.trials().first() {
                    render_command(template, first, &aliases)?;
                }
                Ok(Box::new(ExternalCommandExecutor {
                    template: template.clone(),
                    timeout: Duration::from_secs_f64(*timeout_secs),
                    timeout_secs: *timeout_secs,
                    aliases,
                }))
            }
        }
    }
}

/// Runs every trial of the design in ascending run order.
pub fn run_experiment(
    design: &DesignMatrix,
    executor: &mut dyn Executor,
) -> Result<ResultSet, RunFailure> {
    let unit = design.selection().response().unit().to_string();
    resume_experiment(design, executor, ResultSet::new(unit))
}

/// Runs the trials missing from `partial`, in ascending run order, and
/// returns the combined results. On failure the error carries everything
/// collected so far.
pub fn resume_experiment(
    design: &DesignMatrix,
    executor: &mut dyn Executor,
    partial: ResultSet,
) -> Result<ResultSet, RunFailure> {
    let aliases = design.selection().aliases();
    let expected_unit = design.selection().response().unit();

    let fail = |run_order, partial, source| RunFailure { run_order, partial, source };

    if partial.unit() != expected_unit {
        let source = RunnerError::PartialUnitMismatch {
            expected: expected_unit.to_string(),
            found: partial.unit().to_string(),
        };
        return Err(fail(0, ResultSet::new(expected_unit), source));
    }
    let partial_runs: Vec<u32> = partial.iter().map(|(run, _)| run).collect();
    for run in partial_runs {
        if !design.trials().iter().any(|t| t.run_order == run) {
            let source = RunnerError::UnknownRunOrder(run);
            return Err(fail(run, partial, source));
        }
    }

    let mut results = partial;
    for trial in design.trials() {
        if results.get(trial.run_order).is_some() {
            continue;
        }
        let ctx = TrialContext {
            run_order: trial.run_order,
            aliases: &aliases,
            labels: &trial.assignment,
            coded: trial.coded.as_deref(),
        };
        match executor.execute(&ctx) {
            Ok(value) => {
                if let Err(source) = results.insert(trial.run_order, value) {
                    let source = RunnerError::UnparseableOutput(source.to_string());
                    return Err(fail(trial.run_order, results, source));
                }
            }
            Err(source) => return Err(fail(trial.run_order, results, source)),
        }
    }
    Ok(results)
}

/// Renders results as CSV: `run_order,response`, one row per trial, sorted by
/// run order. The unit lives in the experiment manifest, not in the file.
pub fn results_to_csv(results: &ResultSet) -> String {
    let mut out = String::from("run_order,response\n");
    for (run, value) in results.iter() {
        out.push_str(&format!("{run},{value}\n"));
    }
    out
}

/// Parses a results CSV into a result set carrying the given unit.
pub fn results_from_csv(text: &str, unit: &str) -> Result<ResultSet, RunnerError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "run_order,response")) => {}
        other => {
            return Err(RunnerError::CsvFormat {
                line: 1,
                detail: format!(
                    "expected header `run_order,response`, found `{}`",
                    other.map(|(_, l)| l).unwrap_or_default()
                ),
            })
        }
    }
    let mut results = ResultSet::new(unit);
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (run, value) = line.split_once(',').ok_or_else(|| RunnerError::CsvFormat {
            line: lineno,
            detail: "expected two comma-separated fields".to_string(),
        })?;
        let run: u32 = run.parse().map_err(|_| RunnerError::CsvFormat {
            line: lineno,
            detail: format!("run_order `{run}` is not a positive integer"),
        })?;
        let value: f64 = value.parse().map_err(|_| RunnerError::CsvFormat {
            line: lineno,
            detail: format!("response `{value}` is not a number"),
        })?;
        if !value.is_finite() {
            return Err(RunnerError::CsvFormat {
                line: lineno,
                detail: "response must be finite".to_string(),
            });
        }
        if results.get(run).is_some() {
            return Err(RunnerError::CsvDuplicate(run));
        }
        results
            .insert(run, value)
            .map_err(|e| RunnerError::CsvFormat {
                line: lineno,
                detail: e.to_string(),
            })?;
    }
    Ok(results)
}
