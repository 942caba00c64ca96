//! Command-line interface: `simulate`, `tune`, `report` and `kb`.
//!
//! Every subcommand accepts `--config <file>` pointing at a key=value file
//! with one `[simulate]`, `[tune]`, `[report]`, `[kb.build]` or
//! `[kb.inspect]` section per subcommand. Keys are long flag names without
//! the leading dashes; flags given on the command line win.
//!
//! Exit codes: 0 success, 1 data or runtime failure, 2 usage or
//! configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::driver::{live_tune, BuildRecipe, CommandEvaluator, DEFAULT_REPETITIONS};
use crate::eval::{
    delays_against, run_loocv, speedup, Checkpoint, Delay, EvaluationReport, LoocvOptions,
};
use crate::features::ComponentSelection;
use crate::ingest::{
    read_features, read_flag_table, read_measurements, read_summary, write_delays, write_report,
    DatasetBundle, Manifest, SUMMARY_FILE,
};
use crate::metrics::{DistanceMetric, DEFAULT_EPSILON};
use crate::model::{build_knowledge_base, FlagTable, KnowledgeBase, Objective, TargetKey};
use crate::recommend::{AlgorithmKind, RecommenderConfig, Suite};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";
pub const SESSION_LOG_FILE: &str = "session_log.csv";

const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 0.25, 0.1, 0.05];
const DEFAULT_ITERATIONS: [usize; 4] = [2, 5, 10, 15];

#[derive(Debug, Parser)]
#[command(
    name = "flagrec",
    version,
    about = "Recommender-driven compiler flag autotuning"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Leave-one-out replay of a recorded dataset
    Simulate(SimulateArgs),
    /// Live tuning of a real program
    Tune(TuneArgs),
    /// Gap and iteration delays from a simulate report
    Report(ReportArgs),
    /// Build or inspect a persisted knowledge base
    #[command(subcommand)]
    Kb(KbCmd),
}

#[derive(Debug, Subcommand)]
pub enum KbCmd {
    /// Persist a knowledge base directory
    Build(KbBuildArgs),
    /// Print target count, catalogue size and per-target best sets
    Inspect(KbInspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// Measurements table (program,workload,set_index,value)
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    /// Flag table, one flag per line (default: the built-in seven flags)
    #[arg(long)]
    pub sets: Option<PathBuf>,
    /// Features table (program,workload,m0,m1,...)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Knowledge-base directory written by `kb build` (instead of the files above)
    #[arg(long, conflicts_with_all = ["measurements", "sets"])]
    pub kb: Option<PathBuf>,
    /// Baseline set index (default: the -O3 bit alone, or 0)
    #[arg(long)]
    pub baseline: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AlgoArgs {
    /// Neighbour count (default: 5 for cbf, 15 or 20 for cf by suite)
    #[arg(long)]
    pub k: Option<usize>,
    /// Distance metric (default: euclidean for cbf, correlation for cf)
    #[arg(long)]
    pub metric: Option<DistanceMetric>,
    /// Optimisation direction of the performance value
    #[arg(long, default_value = "min")]
    pub objective: Objective,
    /// Evaluations per session (default: the catalogue size)
    #[arg(long)]
    pub budget: Option<usize>,
    /// Seed for random search
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Distance clamp used when converting distances to similarities
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// PCA components for cbf: a count, or a variance fraction in (0, 1)
    #[arg(long)]
    pub pca_components: Option<String>,
    /// Suite flavour for the default neighbour counts: cbench or polybench
    #[arg(long, default_value = "cbench")]
    pub suite: String,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Comma-separated algorithms: random, tp, cbf, cf
    #[arg(long, default_value = "cf")]
    pub algo: String,
    #[command(flatten)]
    pub tuning: AlgoArgs,
    /// Repetitions (default: 1 for deterministic algorithms, 1000 for random)
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads for the leave-one-out folds
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Reference algorithm for delays.csv
    #[arg(long, default_value = "cf")]
    pub reference: String,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Algorithm: random, tp, cbf or cf
    #[arg(long, default_value = "cf")]
    pub algo: String,
    #[command(flatten)]
    pub tuning: AlgoArgs,
    /// Compile template with {flags} and {output} placeholders
    #[arg(long)]
    pub compile: String,
    /// Run template with a {binary} placeholder
    #[arg(long)]
    pub run: String,
    /// Working directory for both commands
    #[arg(long, default_value = ".")]
    pub workdir: PathBuf,
    /// Timed runs per measurement; the median is kept
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    pub runs: usize,
    /// Compile timeout in seconds
    #[arg(long, default_value_t = 300.0)]
    pub compile_timeout: f64,
    /// Run timeout in seconds
    #[arg(long, default_value_t = 600.0)]
    pub run_timeout: f64,
    /// Pin the workload to this CPU with taskset
    #[arg(long)]
    pub cpu: Option<usize>,
    /// Program name of the tuned target
    #[arg(long, default_value = "target")]
    pub program: String,
    /// Workload name of the tuned target
    #[arg(long, default_value = "0")]
    pub workload: String,
    /// Comma-separated raw feature vector of the tuned target (cbf)
    #[arg(long)]
    pub target_features: Option<String>,
    /// Output directory for the session log
    #[arg(long, default_value = "tune_output")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report directory written by `simulate`
    #[arg(long)]
    pub dir: PathBuf,
    /// Reference algorithm
    #[arg(long, default_value = "cf")]
    pub reference: String,
    /// Comma-separated harmonic-gap thresholds
    #[arg(long, default_value = "0.5,0.25,0.1,0.05")]
    pub thresholds: String,
    /// Comma-separated iteration checkpoints
    #[arg(long, default_value = "2,5,10,15")]
    pub iterations: String,
    /// Output directory (default: the report directory)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct KbBuildArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value = "min")]
    pub objective: Objective,
    /// Suite name recorded in the manifest
    #[arg(long, default_value = "")]
    pub suite: String,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct KbInspectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value = "min")]
    pub objective: Objective,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

/// Runs the CLI with `args` (including the program name), writing normal
/// output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config_file(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let matches = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (section, sub_matches) = leaf(&matches);
    let resolved = resolved_config(&section, sub_matches);
    let result = match cli.command {
        Cmd::Simulate(a) => cmd_simulate(&a, &resolved, out),
        Cmd::Tune(a) => cmd_tune(&a, &resolved, out),
        Cmd::Report(a) => cmd_report(&a, &resolved, out),
        Cmd::Kb(KbCmd::Build(a)) => cmd_kb_build(&a, &resolved, out),
        Cmd::Kb(KbCmd::Inspect(a)) => cmd_kb_inspect(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn leaf(matches: &ArgMatches) -> (String, &ArgMatches) {
    let mut name = Vec::new();
    let mut m = matches;
    while let Some((sub, sm)) = m.subcommand() {
        name.push(sub.to_string());
        m = sm;
    }
    (name.join("."), m)
}

/// `[section]` followed by `key = value` for every resolved option.
fn resolved_config(section: &str, matches: &ArgMatches) -> String {
    let mut out = format!("[{section}]\n");
    for id in matches.ids() {
        if id.as_str() == "config" {
            continue;
        }
        let Ok(Some(values)) = matches.try_get_raw(id.as_str()) else {
            continue;
        };
        let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
        out.push_str(&format!(
            "{} = {}\n",
            id.as_str().replace('_', "-"),
            joined.join(",")
        ));
    }
    out
}

fn write_resolved(dir: &Path, resolved: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(data)?;
    fs::write(dir.join(RESOLVED_CONFIG_FILE), resolved).map_err(data)
}

/// Parses a config file into `section -> [(key, value, line)]`.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, Vec<(String, String)>>, CliError> {
    let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "config line {}: expected key=value",
                i + 1
            )));
        };
        let Some(section) = &current else {
            return Err(CliError::Config(format!(
                "config line {}: key {:?} outside a [section]",
                i + 1,
                key.trim()
            )));
        };
        sections
            .get_mut(section)
            .expect("section registered")
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

fn find_config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn subcommand_path(args: &[OsString]) -> Vec<String> {
    let mut path = Vec::new();
    let mut cmd = Cli::command();
    for a in args.iter().skip(1) {
        let s = a.to_string_lossy();
        match cmd.find_subcommand(s.as_ref()) {
            Some(sub) => {
                path.push(s.into_owned());
                cmd = sub.clone();
            }
            None => break,
        }
    }
    path
}

fn long_flags(path: &[String]) -> Option<Vec<String>> {
    let mut cmd = Cli::command();
    for p in path {
        cmd = cmd.find_subcommand(p)?.clone();
    }
    Some(
        cmd.get_arguments()
            .filter_map(|a| a.get_long().map(str::to_string))
            .collect(),
    )
}

/// Splices config-file options in front of the command-line options so the
/// latter override them.
fn apply_config_file(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = find_config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let sections = parse_config_file(&text)?;
    for (section, entries) in &sections {
        let sub: Vec<String> = section.split('.').map(str::to_string).collect();
        let known = long_flags(&sub)
            .filter(|_| !sub.is_empty() && Cli::command().find_subcommand(&sub[0]).is_some());
        let Some(known) = known else {
            return Err(CliError::Config(format!(
                "unknown config section [{section}]"
            )));
        };
        for (key, _) in entries {
            if key == "config" || !known.contains(key) {
                return Err(CliError::Config(format!(
                    "unknown key {key:?} in [{section}]"
                )));
            }
        }
    }
    let path_now = subcommand_path(&args);
    let depth = 1 + path_now.len();
    let mut spliced: Vec<OsString> = args[..depth].to_vec();
    if let Some(entries) = sections.get(&path_now.join(".")) {
        for (key, value) in entries {
            spliced.push(format!("--{key}").into());
            spliced.push(value.into());
        }
    }
    spliced.extend_from_slice(&args[depth..]);
    Ok(spliced)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse()
                .map_err(|_| CliError::Config(format!("invalid {what} {x:?}")))
        })
        .collect()
}

fn parse_components(s: Option<&str>) -> Result<ComponentSelection, CliError> {
    let Some(s) = s else {
        return Ok(ComponentSelection::default());
    };
    if let Ok(c) = s.parse::<usize>() {
        return Ok(ComponentSelection::Count(c));
    }
    match s.parse::<f64>() {
        Ok(f) if f > 0.0 && f < 1.0 => Ok(ComponentSelection::VarianceFraction(f)),
        _ => Err(CliError::Config(format!(
            "--pca-components expects a count or a fraction in (0, 1), got {s:?}"
        ))),
    }
}

fn parse_suite(s: &str) -> Result<Suite, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "cbench" => Ok(Suite::CBench),
        "polybench" => Ok(Suite::PolyBench),
        other => Err(CliError::Config(format!(
            "unknown suite {other:?} (expected cbench or polybench)"
        ))),
    }
}

fn recommender_config(kind: AlgorithmKind, a: &AlgoArgs) -> Result<RecommenderConfig, CliError> {
    let mut c = RecommenderConfig::tuned(kind, parse_suite(&a.suite)?);
    if let Some(k) = a.k {
        if k == 0 {
            return Err(CliError::Config("--k must be at least 1".into()));
        }
        c.k = k;
    }
    if let Some(m) = a.metric {
        c.metric = m;
    }
    if a.epsilon.is_nan() || a.epsilon <= 0.0 {
        return Err(CliError::Config("--epsilon must be positive".into()));
    }
    c.objective = a.objective;
    c.seed = a.seed;
    c.epsilon = a.epsilon;
    c.components = parse_components(a.pca_components.as_deref())?;
    Ok(c)
}

/// Loads the dataset named by `args`. Without measurements the result is an
/// empty knowledge base over the flag table.
fn load_dataset(
    args: &DatasetArgs,
    objective: Objective,
) -> Result<(KnowledgeBase, Manifest), CliError> {
    if let Some(dir) = &args.kb {
        let mut bundle = DatasetBundle::load(dir).map_err(data)?;
        if let Some(f) = &args.features {
            bundle.kb = bundle.kb.with_features(read_features(f).map_err(data)?);
        }
        return Ok((bundle.kb, bundle.manifest));
    }
    let flags = match &args.sets {
        Some(p) => read_flag_table(p).map_err(data)?,
        None => FlagTable::standard(),
    };
    let baseline = args.baseline.unwrap_or_else(|| flags.default_baseline());
    if baseline >= flags.catalogue_size() {
        return Err(CliError::Config(format!(
            "--baseline {baseline} outside the catalogue of {} sets",
            flags.catalogue_size()
        )));
    }
    let ms = match &args.measurements {
        Some(p) => read_measurements(p, flags.catalogue_size()).map_err(data)?,
        None => Vec::new(),
    };
    let mut kb = build_knowledge_base(&ms, flags, baseline).map_err(data)?;
    if let Some(f) = &args.features {
        kb = kb.with_features(read_features(f).map_err(data)?);
    }
    Ok((
        kb,
        Manifest {
            baseline,
            objective,
            suite: String::new(),
        },
    ))
}

fn parse_algorithms(s: &str) -> Result<Vec<AlgorithmKind>, CliError> {
    let mut kinds: Vec<AlgorithmKind> = parse_list::<String>(s, "algorithm")?
        .iter()
        .map(|x| x.parse::<AlgorithmKind>().map_err(CliError::Config))
        .collect::<Result<_, _>>()?;
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(CliError::Config("--algo names no algorithm".into()));
    }
    Ok(kinds)
}

pub fn cmd_simulate(a: &SimulateArgs, resolved: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let kinds = parse_algorithms(&a.algo)?;
    if kinds.contains(&AlgorithmKind::ContentBased)
        && a.dataset.features.is_none()
        && a.dataset.kb.is_none()
    {
        return Err(CliError::Config("--algo cbf requires --features".into()));
    }
    if a.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let configs = kinds
        .iter()
        .map(|&k| recommender_config(k, &a.tuning))
        .collect::<Result<Vec<_>, _>>()?;
    let (kb, _) = load_dataset(&a.dataset, a.tuning.objective)?;
    if kinds.contains(&AlgorithmKind::ContentBased) && kb.features().is_none() {
        return Err(CliError::Config("--algo cbf requires --features".into()));
    }
    let budget = a.tuning.budget.unwrap_or(kb.catalogue_size());
    if budget == 0 {
        return Err(CliError::Config("--budget must be at least 1".into()));
    }
    let mut report = EvaluationReport::default();
    for config in &configs {
        let repetitions = a
            .reps
            .unwrap_or(if config.kind.is_randomized() { 1000 } else { 1 });
        let r = run_loocv(
            &kb,
            config,
            LoocvOptions {
                budget,
                repetitions,
                jobs: a.jobs,
            },
        )
        .map_err(data)?;
        report = report.merge(r);
    }
    let reference = if report.get(&a.reference).is_some() {
        a.reference.clone()
    } else {
        report.algorithms.keys().next().cloned().unwrap_or_default()
    };
    let checkpoints = default_checkpoints();
    let delays =
        delays_against(&report.harmonic_curves(), &reference, &checkpoints).map_err(data)?;
    write_report(&report, &delays, &a.out).map_err(data)?;
    write_resolved(&a.out, resolved)?;
    for (name, alg) in &report.algorithms {
        let at = |i: usize| alg.harmonic.get(i - 1).copied().unwrap_or(f64::NAN);
        writeln!(
            out,
            "{name}: {} targets ({} excluded), harmonic gap @1 {:.4} @5 {:.4} @{} {:.4}",
            alg.curves.len(),
            alg.excluded.len(),
            at(1),
            at(5.min(alg.budget)),
            alg.budget,
            at(alg.budget)
        )
        .map_err(data)?;
    }
    Ok(())
}

fn default_checkpoints() -> Vec<Checkpoint> {
    DEFAULT_THRESHOLDS
        .iter()
        .map(|&g| Checkpoint::Gap(g))
        .chain(DEFAULT_ITERATIONS.iter().map(|&i| Checkpoint::Iteration(i)))
        .collect()
}

pub fn cmd_tune(a: &TuneArgs, resolved: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let kind: AlgorithmKind = a.algo.parse().map_err(CliError::Config)?;
    let config = recommender_config(kind, &a.tuning)?;
    let target_features = match &a.target_features {
        Some(s) => Some(parse_list::<f64>(s, "feature value")?),
        None => None,
    };
    if kind == AlgorithmKind::ContentBased
        && (target_features.is_none() || a.dataset.features.is_none() && a.dataset.kb.is_none())
    {
        return Err(CliError::Config(
            "--algo cbf requires --features and --target-features".into(),
        ));
    }
    let timeout = |s: f64, what: &str| {
        if s > 0.0 && s.is_finite() {
            Ok(Duration::from_secs_f64(s))
        } else {
            Err(CliError::Config(format!("--{what} must be positive")))
        }
    };
    let recipe = BuildRecipe {
        compile: a.compile.clone(),
        run: a.run.clone(),
        workdir: a.workdir.clone(),
        compile_timeout: timeout(a.compile_timeout, "compile-timeout")?,
        run_timeout: timeout(a.run_timeout, "run-timeout")?,
        repetitions: a.runs,
        cpu: a.cpu,
    };
    recipe.validate().map_err(config_err)?;
    let (kb, _) = load_dataset(&a.dataset, a.tuning.objective)?;
    if kb.is_empty() && kind != AlgorithmKind::Random {
        log::warn!("knowledge base is empty: suggestions follow set-index order");
        eprintln!("warning: no knowledge base; suggestions follow set-index order");
    }
    let budget = a.tuning.budget.unwrap_or(kb.catalogue_size());
    let mut evaluator = CommandEvaluator::new(recipe, kb.flags().clone()).map_err(config_err)?;
    let outcome = live_tune(
        &mut evaluator,
        &kb,
        &config,
        TargetKey::new(a.program.clone(), a.workload.clone()),
        target_features.as_deref(),
        budget,
    )
    .map_err(data)?;
    fs::create_dir_all(&a.out).map_err(data)?;
    fs::write(a.out.join(SESSION_LOG_FILE), outcome.log.to_csv()).map_err(data)?;
    write_resolved(&a.out, resolved)?;
    let (best, value) = outcome.best;
    writeln!(
        out,
        "best set {best} [{}]: {value} vs baseline {} (speedup {:.4}) after {} evaluations",
        kb.flags().render(best).map_err(data)?,
        outcome.baseline_value,
        speedup(outcome.baseline_value, value, config.objective),
        outcome.session.len()
    )
    .map_err(data)?;
    Ok(())
}

pub fn cmd_report(a: &ReportArgs, resolved: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let thresholds: Vec<f64> = parse_list(&a.thresholds, "threshold")?;
    let iterations: Vec<usize> = parse_list(&a.iterations, "iteration")?;
    let harmonic = read_summary(&a.dir.join(SUMMARY_FILE)).map_err(data)?;
    if !harmonic.contains_key(&a.reference) {
        return Err(CliError::Data(format!(
            "reference algorithm {:?} not in report (found: {})",
            a.reference,
            harmonic.keys().cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    let checkpoints: Vec<Checkpoint> = thresholds
        .iter()
        .map(|&g| Checkpoint::Gap(g))
        .chain(iterations.iter().map(|&i| Checkpoint::Iteration(i)))
        .collect();
    let rows = delays_against(&harmonic, &a.reference, &checkpoints).map_err(data)?;
    if let Some(g) = rows.iter().find_map(|r| match (r.checkpoint, r.delay) {
        (Checkpoint::Gap(g), None) => Some(g),
        _ => None,
    }) {
        return Err(CliError::Data(format!(
            "reference {} never reaches harmonic gap {g}",
            a.reference
        )));
    }
    let out_dir = a.out.clone().unwrap_or_else(|| a.dir.clone());
    let path = write_delays(&rows, &out_dir).map_err(data)?;
    if a.out.is_some() {
        write_resolved(&out_dir, resolved)?;
    }
    for r in rows.iter().filter(|r| r.algorithm != a.reference) {
        let d = r.delay.unwrap_or(Delay::Never);
        writeln!(out, "{} {} delay {}", r.algorithm, r.checkpoint, d).map_err(data)?;
    }
    writeln!(out, "wrote {}", path.display()).map_err(data)?;
    Ok(())
}

pub fn cmd_kb_build(a: &KbBuildArgs, resolved: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let (kb, mut manifest) = load_dataset(&a.dataset, a.objective)?;
    manifest.objective = a.objective;
    if !a.suite.is_empty() {
        manifest.suite = a.suite.clone();
    }
    let bundle = DatasetBundle { kb, manifest };
    bundle.save(&a.out).map_err(data)?;
    write_resolved(&a.out, resolved)?;
    writeln!(
        out,
        "{} targets, catalogue of {} sets, written to {}",
        bundle.kb.len(),
        bundle.kb.catalogue_size(),
        a.out.display()
    )
    .map_err(data)?;
    Ok(())
}

pub fn cmd_kb_inspect(a: &KbInspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (kb, manifest) = load_dataset(&a.dataset, a.objective)?;
    let objective = if a.dataset.kb.is_some() {
        manifest.objective
    } else {
        a.objective
    };
    writeln!(out, "{} targets", kb.len()).map_err(data)?;
    writeln!(out, "catalogue: {} sets", kb.catalogue_size()).map_err(data)?;
    writeln!(out, "baseline: {}", kb.baseline()).map_err(data)?;
    for (target, row) in kb.rows() {
        let base = row.value(kb.baseline()).expect("baseline present");
        let (best, value) = row.best(objective).expect("row has the baseline");
        writeln!(
            out,
            "{target}: best set {best} speedup {:.4}",
            speedup(base, value, objective)
        )
        .map_err(data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections() {
        let parsed = parse_config_file(
            "# c\n[simulate]\nk = 5\nmetric=cosine\n\n[report]\nreference = tp\n",
        )
        .unwrap();
        assert_eq!(
            parsed["simulate"],
            vec![("k".into(), "5".into()), ("metric".into(), "cosine".into())]
        );
        assert!(parse_config_file("k = 5\n").is_err());
        assert!(parse_config_file("[simulate]\nnonsense\n").is_err());
    }

    #[test]
    fn components_parse() {
        assert_eq!(
            parse_components(Some("3")).unwrap(),
            ComponentSelection::Count(3)
        );
        assert_eq!(
            parse_components(Some("0.9")).unwrap(),
            ComponentSelection::VarianceFraction(0.9)
        );
        assert!(parse_components(Some("1.5")).is_err());
    }

    #[test]
    fn help_lists_flags() {
        let mut cmd = Cli::command();
        let sim = cmd.find_subcommand_mut("simulate").unwrap();
        let help = sim.render_long_help().to_string();
        for flag in [
            "--measurements",
            "--sets",
            "--features",
            "--algo",
            "--k",
            "--metric",
            "--objective",
            "--budget",
            "--reps",
            "--seed",
            "--out",
            "--epsilon",
            "--pca-components",
            "--jobs",
        ] {
            assert!(help.contains(flag), "{flag} missing from help");
        }
    }
}
