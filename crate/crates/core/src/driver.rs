//! Live tuning loop: compile the program with a rendered flag set, run its
//! workload, time it, and feed the measurement back to the recommender.
//!
//! Commands are user-supplied templates run through `sh -c`. The compile
//! template must contain `{flags}` and `{output}`; the run template must
//! contain `{binary}`. Measurements run strictly one at a time.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::{FlagTable, KnowledgeBase, ModelError, TargetKey};
use crate::recommend::{build_recommender, RecommendError, RecommenderConfig, TuningSession};
use crate::stats::median;

pub const DEFAULT_REPETITIONS: usize = 5;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("compilation failed ({status}): {diagnostics}")]
    CompileFailed { status: String, diagnostics: String },
    #[error("workload failed ({status}): {diagnostics}")]
    RunFailed { status: String, diagnostics: String },
    #[error("{what} timed out after {after:?}")]
    Timeout { what: &'static str, after: Duration },
    #[error("failed to spawn {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("baseline set {set} could not be measured: {source}")]
    BaselineFailed {
        set: usize,
        #[source]
        source: Box<DriverError>,
    },
    #[error("every evaluated set except the baseline failed")]
    AllSetsFailed,
    #[error("no recorded value for set {0}")]
    MissingValue(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
}

/// How to build and run the program under tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildRecipe {
    pub compile: String,
    pub run: String,
    pub workdir: PathBuf,
    pub compile_timeout: Duration,
    pub run_timeout: Duration,
    pub repetitions: usize,
    /// Pins the workload to this CPU with `taskset` when set.
    pub cpu: Option<usize>,
}

impl BuildRecipe {
    pub fn new(
        compile: impl Into<String>,
        run: impl Into<String>,
        workdir: impl Into<PathBuf>,
    ) -> Self {
        BuildRecipe {
            compile: compile.into(),
            run: run.into(),
            workdir: workdir.into(),
            compile_timeout: Duration::from_secs(300),
            run_timeout: Duration::from_secs(600),
            repetitions: DEFAULT_REPETITIONS,
            cpu: None,
        }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        for placeholder in ["{flags}", "{output}"] {
            if !self.compile.contains(placeholder) {
                return Err(DriverError::InvalidRecipe(format!(
                    "compile template lacks {placeholder}"
                )));
            }
        }
        if !self.run.contains("{binary}") {
            return Err(DriverError::InvalidRecipe(
                "run template lacks {binary}".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(DriverError::InvalidRecipe(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.compile_timeout.is_zero() || self.run_timeout.is_zero() {
            return Err(DriverError::InvalidRecipe(
                "timeouts must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn compile_command(&self, flags: &str, output: &Path) -> String {
        self.compile
            .replace("{flags}", flags)
            .replace("{output}", &output.display().to_string())
    }

    pub fn run_command(&self, binary: &Path) -> String {
        let cmd = self.run.replace("{binary}", &binary.display().to_string());
        match self.cpu {
            Some(cpu) => format!("taskset -c {cpu} {cmd}"),
            None => cmd,
        }
    }
}

/// Exit status and captured output of one subprocess.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessRecord {
    pub command: String,
    /// `None` when the process was killed on timeout.
    pub exit_code: Option<i32>,
    pub elapsed: Duration,
    pub stderr: String,
}

enum Finished {
    Exited(ExitStatus, Duration, String, String),
    TimedOut(Duration),
}

fn run_shell(command: &str, workdir: &Path, timeout: Duration) -> Result<Finished, DriverError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| DriverError::Spawn {
            command: command.to_string(),
            source,
        })?;
    let start = Instant::now();
    let drain = |mut pipe: Box<dyn Read + Send>| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = pipe.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        })
    };
    let out = drain(Box::new(child.stdout.take().expect("piped stdout")));
    let err = drain(Box::new(child.stderr.take().expect("piped stderr")));
    loop {
        if let Some(status) = child.try_wait().map_err(|source| DriverError::Spawn {
            command: command.to_string(),
            source,
        })? {
            let elapsed = start.elapsed();
            let stdout = out.join().unwrap_or_default();
            let stderr = err.join().unwrap_or_default();
            return Ok(Finished::Exited(status, elapsed, stdout, stderr));
        }
        let elapsed = start.elapsed();
        if elapsed >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(Finished::TimedOut(elapsed));
        }
        thread::sleep(Duration::from_micros(200).min(timeout - elapsed));
    }
}

fn describe(status: &ExitStatus) -> String {
    match status.code() {
        Some(c) => format!("exit code {c}"),
        None => "terminated by signal".into(),
    }
}

/// A compiled executable.
#[derive(Debug, Clone, PartialEq)]
pub struct Binary {
    pub path: PathBuf,
    pub record: ProcessRecord,
}

/// Builds the program with `flags` rendered into the compile template.
pub fn compile(recipe: &BuildRecipe, table: &FlagTable, set: usize) -> Result<Binary, DriverError> {
    recipe.validate()?;
    let flags = table.render(set)?;
    // commands run inside the workdir, so the output path must not be relative to it
    let workdir = std::path::absolute(&recipe.workdir).map_err(|source| DriverError::Spawn {
        command: format!("resolve workdir {}", recipe.workdir.display()),
        source,
    })?;
    let output = workdir.join(format!("flagrec-set-{set}"));
    let command = recipe.compile_command(&flags, &output);
    match run_shell(&command, &recipe.workdir, recipe.compile_timeout)? {
        Finished::Exited(status, elapsed, stdout, stderr) => {
            let record = ProcessRecord {
                command,
                exit_code: status.code(),
                elapsed,
                stderr: stderr.clone(),
            };
            if status.success() {
                Ok(Binary {
                    path: output,
                    record,
                })
            } else {
                let mut diagnostics = stderr;
                if diagnostics.trim().is_empty() {
                    diagnostics = stdout;
                }
                Err(DriverError::CompileFailed {
                    status: describe(&status),
                    diagnostics: diagnostics.trim().to_string(),
                })
            }
        }
        Finished::TimedOut(after) => Err(DriverError::Timeout {
            what: "compilation",
            after,
        }),
    }
}

/// Wall-clock timings of repeated workload runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Median of `raw`, in seconds.
    pub value: f64,
    pub raw: Vec<f64>,
    pub records: Vec<ProcessRecord>,
}

/// Runs the workload `recipe.repetitions` times and returns the median
/// wall-clock time.
pub fn measure(recipe: &BuildRecipe, binary: &Binary) -> Result<Timing, DriverError> {
    recipe.validate()?;
    let command = recipe.run_command(&binary.path);
    let mut raw = Vec::with_capacity(recipe.repetitions);
    let mut records = Vec::with_capacity(recipe.repetitions);
    for _ in 0..recipe.repetitions {
        match run_shell(&command, &recipe.workdir, recipe.run_timeout)? {
            Finished::Exited(status, elapsed, _, stderr) => {
                if !status.success() {
                    return Err(DriverError::RunFailed {
                        status: describe(&status),
                        diagnostics: stderr.trim().to_string(),
                    });
                }
                raw.push(elapsed.as_secs_f64());
                records.push(ProcessRecord {
                    command: command.clone(),
                    exit_code: status.code(),
                    elapsed,
                    stderr,
                });
            }
            Finished::TimedOut(after) => {
                return Err(DriverError::Timeout {
                    what: "workload",
                    after,
                })
            }
        }
    }
    Ok(Timing {
        value: median(&raw).expect("at least one repetition"),
        raw,
        records,
    })
}

/// Result of evaluating one set.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub value: f64,
    pub raw: Vec<f64>,
    pub exit_codes: Vec<Option<i32>>,
}

/// Source of measurements for the live loop.
pub trait Evaluator {
    fn evaluate(&mut self, set: usize) -> Result<Outcome, DriverError>;
}

/// Compiles and times real programs.
pub struct CommandEvaluator {
    pub recipe: BuildRecipe,
    pub flags: FlagTable,
}

impl CommandEvaluator {
    pub fn new(recipe: BuildRecipe, flags: FlagTable) -> Result<Self, DriverError> {
        recipe.validate()?;
        Ok(CommandEvaluator { recipe, flags })
    }
}

impl Evaluator for CommandEvaluator {
    fn evaluate(&mut self, set: usize) -> Result<Outcome, DriverError> {
        let binary = compile(&self.recipe, &self.flags, set)?;
        let timing = measure(&self.recipe, &binary);
        let _ = std::fs::remove_file(&binary.path);
        let timing = timing?;
        let mut exit_codes = vec![binary.record.exit_code];
        exit_codes.extend(timing.records.iter().map(|r| r.exit_code));
        Ok(Outcome {
            value: timing.value,
            raw: timing.raw,
            exit_codes,
        })
    }
}

/// Serves recorded values; sets missing from the table fail like a broken
/// build.
pub struct TableEvaluator {
    values: Vec<Option<f64>>,
}

impl TableEvaluator {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        TableEvaluator { values }
    }

    pub fn from_kb(kb: &KnowledgeBase, target: &TargetKey) -> Self {
        let values = match kb.row(target) {
            Some(row) => row.values().to_vec(),
            None => vec![None; kb.catalogue_size()],
        };
        TableEvaluator { values }
    }
}

impl Evaluator for TableEvaluator {
    fn evaluate(&mut self, set: usize) -> Result<Outcome, DriverError> {
        match self.values.get(set).copied().flatten() {
            Some(v) => Ok(Outcome {
                value: v,
                raw: vec![v],
                exit_codes: vec![Some(0)],
            }),
            None => Err(DriverError::MissingValue(set)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Ok,
    Failed,
}

impl fmt::Display for EntryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryStatus::Ok => "ok",
            EntryStatus::Failed => "failed",
        })
    }
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub set: usize,
    pub flags: String,
    pub status: EntryStatus,
    pub value: Option<f64>,
    pub relevance: Option<f64>,
    pub raw: Vec<f64>,
    pub exit_codes: Vec<Option<i32>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub entries: Vec<LogEntry>,
}

pub const SESSION_LOG_HEADER: &str =
    "iteration,set_index,flags,status,value,relevance,timings,exit_codes,error";

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SessionLog {
    /// CSV rendering; timings and exit codes are `;`-separated lists.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SESSION_LOG_HEADER);
        out.push('\n');
        for e in &self.entries {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let raw: Vec<String> = e.raw.iter().map(|t| t.to_string()).collect();
            let codes: Vec<String> = e
                .exit_codes
                .iter()
                .map(|c| c.map_or_else(|| "killed".to_string(), |c| c.to_string()))
                .collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.iteration,
                e.set,
                csv_quote(&e.flags),
                e.status,
                opt(e.value),
                opt(e.relevance),
                raw.join(";"),
                codes.join(";"),
                csv_quote(
                    e.error
                        .as_deref()
                        .unwrap_or("")
                        .lines()
                        .next()
                        .unwrap_or("")
                ),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub session: TuningSession,
    pub log: SessionLog,
    /// Best measured set and its value.
    pub best: (usize, f64),
    pub baseline_value: f64,
}

/// Drives the configured recommender against `evaluator` until the budget or
/// the catalogue runs out.
///
/// A failing non-baseline set consumes one evaluation, is never suggested
/// again and contributes no reaction. A failing baseline is fatal.
pub fn live_tune(
    evaluator: &mut dyn Evaluator,
    kb: &KnowledgeBase,
    config: &RecommenderConfig,
    target: TargetKey,
    target_features: Option<&[f64]>,
    budget: usize,
) -> Result<TuneOutcome, DriverError> {
    let recommender = build_recommender(kb, config, target_features)?;
    let mut session = TuningSession::for_kb(target, kb, budget, config.objective);
    let mut log = SessionLog::default();
    let mut baseline_value = None;
    let mut failures = 0usize;

    while let Some(set) = recommender.next_for(&session) {
        let flags = kb.flags().render(set)?;
        let iteration = session.len() + 1;
        match evaluator.evaluate(set) {
            Ok(outcome) => {
                let base = *baseline_value.get_or_insert(outcome.value);
                let r = session.observe(set, outcome.value, base)?;
                log.entries.push(LogEntry {
                    iteration,
                    set,
                    flags,
                    status: EntryStatus::Ok,
                    value: Some(outcome.value),
                    relevance: Some(r),
                    raw: outcome.raw,
                    exit_codes: outcome.exit_codes,
                    error: None,
                });
            }
            Err(e) if session.is_empty() => {
                return Err(DriverError::BaselineFailed {
                    set,
                    source: Box::new(e),
                })
            }
            Err(e) => {
                log::warn!("set {set} failed: {e}");
                session.observe_failure(set)?;
                failures += 1;
                log.entries.push(LogEntry {
                    iteration,
                    set,
                    flags,
                    status: EntryStatus::Failed,
                    value: None,
                    relevance: None,
                    raw: Vec::new(),
                    exit_codes: Vec::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if session.len() > 1 && failures == session.len() - 1 {
        return Err(DriverError::AllSetsFailed);
    }
    let best = session.best().expect("baseline was measured");
    Ok(TuneOutcome {
        baseline_value: baseline_value.expect("baseline was measured"),
        best,
        session,
        log,
    })
}
