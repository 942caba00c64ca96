//! Leave-one-out replay of recorded datasets and the metrics used to
//! compare recommenders: normalised performance improvement, optimality gap
//! curves, harmonic and quartile aggregation, and gap / iteration delays.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{KnowledgeBase, Objective, TargetKey};
use crate::recommend::{
    build_recommender, AlgorithmKind, RecommendError, RecommenderConfig, TuningSession,
};
use crate::stats::quantile;

/// Default floor applied to gaps before the harmonic mean.
pub const DEFAULT_HARMONIC_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("degenerate target: baseline value equals the optimum ({0})")]
    DegenerateTarget(f64),
    #[error("empty suggestion trace")]
    EmptyTrace,
    #[error("{target} has no recorded value for suggested set {set}")]
    MissingValue { target: TargetKey, set: usize },
    #[error("{0} has no baseline value")]
    MissingBaseline(TargetKey),
    #[error("reference curve never reaches gap {0}")]
    UndefinedReference(f64),
    #[error("curves differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("replay of {target} failed: {source}")]
    Recommend {
        target: TargetKey,
        #[source]
        source: RecommendError,
    },
    #[error("no target carries a feature vector for content-based filtering: {0}")]
    MissingFeatures(TargetKey),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// Fraction of the available improvement achieved by a set.
pub fn npi(f0: f64, fj: f64, fstar: f64) -> Result<f64, EvalError> {
    if f0 == fstar {
        return Err(EvalError::DegenerateTarget(f0));
    }
    Ok((f0 - fj) / (f0 - fstar))
}

/// Gap@1..Gap@B of one algorithm on one target.
#[derive(Debug, Clone, PartialEq)]
pub struct GapCurve {
    pub target: TargetKey,
    pub algorithm: String,
    pub gaps: Vec<f64>,
}

/// Optimality gaps of a suggestion trace whose first entry is the baseline
/// measurement. Entries are values for valid evaluations, `None` for failed
/// ones. A trace shorter than `budget` (catalogue exhausted) keeps its last
/// gap.
pub fn gap_curve(
    trace: &[Option<f64>],
    f0: f64,
    fstar: f64,
    budget: usize,
) -> Result<Vec<f64>, EvalError> {
    if f0 == fstar {
        return Err(EvalError::DegenerateTarget(f0));
    }
    if trace.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let mut best = 0.0f64;
    let mut gaps = Vec::with_capacity(budget);
    for i in 0..budget {
        if let Some(Some(v)) = trace.get(i) {
            best = best.max(npi(f0, *v, fstar)?);
        }
        gaps.push((1.0 - best).clamp(0.0, 1.0));
    }
    Ok(gaps)
}

/// `n / Σ 1/max(g, floor)`.
pub fn harmonic_gap(gaps: &[f64], floor: f64) -> f64 {
    let denom: f64 = gaps.iter().map(|g| 1.0 / g.max(floor)).sum();
    gaps.len() as f64 / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quartiles. Returns `None` for an empty input.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    Some(Quartiles {
        q1: quantile(values, 0.25)?,
        median: quantile(values, 0.5)?,
        q3: quantile(values, 0.75)?,
    })
}

/// Extra iterations, or `Never` when the other curve never gets there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Delay {
    Iterations(i64),
    Never,
}

impl fmt::Display for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Iterations(n) => write!(f, "{n}"),
            Delay::Never => f.write_str("never"),
        }
    }
}

/// First 1-based iteration at which `curve` is at or below `g`.
pub fn first_reaching(curve: &[f64], g: f64) -> Option<usize> {
    curve.iter().position(|&x| x <= g).map(|i| i + 1)
}

/// Additional iterations `other` needs to reach gap `g` compared with
/// `reference`.
pub fn gap_delay(reference: &[f64], other: &[f64], g: f64) -> Result<Delay, EvalError> {
    if reference.len() != other.len() {
        return Err(EvalError::LengthMismatch(reference.len(), other.len()));
    }
    let j = first_reaching(reference, g).ok_or(EvalError::UndefinedReference(g))?;
    Ok(match first_reaching(other, g) {
        Some(j2) => Delay::Iterations(j2 as i64 - j as i64),
        None => Delay::Never,
    })
}

/// Additional iterations `other` needs to match the gap `reference` has
/// after `iteration` (1-based) evaluations. The count starts where the
/// reference first reached that gap, so a plateau in the reference does not
/// show up as a negative delay. Out-of-range iterations yield `Never`.
pub fn iteration_delay(reference: &[f64], other: &[f64], iteration: usize) -> Delay {
    if iteration == 0 || iteration > reference.len() {
        return Delay::Never;
    }
    let g = reference[iteration - 1];
    let j = first_reaching(reference, g).expect("reference reaches its own gap");
    match first_reaching(other, g) {
        Some(jp) => Delay::Iterations(jp as i64 - j as i64),
        None => Delay::Never,
    }
}

/// Results of one algorithm over a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmReport {
    pub algorithm: String,
    pub budget: usize,
    /// Included targets, sorted by key.
    pub curves: Vec<GapCurve>,
    /// Suggestion sequences per included target, one per repetition.
    pub sequences: BTreeMap<TargetKey, Vec<Vec<usize>>>,
    pub harmonic: Vec<f64>,
    pub quartiles: Vec<Quartiles>,
    /// Targets whose baseline is already optimal.
    pub excluded: Vec<TargetKey>,
}

impl AlgorithmReport {
    /// Assembles the aggregate curves from per-target curves.
    pub fn assemble(
        algorithm: String,
        budget: usize,
        mut curves: Vec<GapCurve>,
        sequences: BTreeMap<TargetKey, Vec<Vec<usize>>>,
        mut excluded: Vec<TargetKey>,
    ) -> Self {
        curves.sort_by(|a, b| a.target.cmp(&b.target));
        excluded.sort();
        let mut harmonic = Vec::with_capacity(budget);
        let mut quarts = Vec::with_capacity(budget);
        for i in 0..budget {
            let column: Vec<f64> = curves.iter().map(|c| c.gaps[i]).collect();
            if column.is_empty() {
                continue;
            }
            harmonic.push(harmonic_gap(&column, DEFAULT_HARMONIC_FLOOR));
            quarts.push(quartiles(&column).expect("non-empty column"));
        }
        AlgorithmReport {
            algorithm,
            budget,
            curves,
            sequences,
            harmonic,
            quartiles: quarts,
            excluded,
        }
    }

    pub fn curve(&self, target: &TargetKey) -> Option<&GapCurve> {
        self.curves.iter().find(|c| &c.target == target)
    }
}

/// Results of one or more algorithms on the same dataset and budget.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub algorithms: BTreeMap<String, AlgorithmReport>,
}

impl EvaluationReport {
    pub fn insert(&mut self, report: AlgorithmReport) {
        self.algorithms.insert(report.algorithm.clone(), report);
    }

    pub fn merge(mut self, other: EvaluationReport) -> Self {
        self.algorithms.extend(other.algorithms);
        self
    }

    pub fn get(&self, algorithm: &str) -> Option<&AlgorithmReport> {
        self.algorithms.get(algorithm)
    }
}

/// One replayed tuning session.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub sequence: Vec<usize>,
    pub values: Vec<f64>,
}

/// Replays a tuning session for `target` against `kb`, reading measured
/// values from `recorded`.
pub fn replay_target(
    kb: &KnowledgeBase,
    recorded: &KnowledgeBase,
    target: &TargetKey,
    config: &RecommenderConfig,
    budget: usize,
) -> Result<Replay, EvalError> {
    let wrap = |source| EvalError::Recommend {
        target: target.clone(),
        source,
    };
    let features = match config.kind {
        AlgorithmKind::ContentBased => Some(
            recorded
                .target_features(target)
                .ok_or_else(|| EvalError::MissingFeatures(target.clone()))?,
        ),
        _ => None,
    };
    let recommender = build_recommender(kb, config, features).map_err(wrap)?;
    let f0 = recorded
        .value(target, recorded.baseline())
        .ok_or_else(|| EvalError::MissingBaseline(target.clone()))?;
    let mut session = TuningSession::for_kb(target.clone(), kb, budget, config.objective);
    let mut values = Vec::with_capacity(session.budget());
    while let Some(set) = recommender.next_for(&session) {
        let v = recorded
            .value(target, set)
            .ok_or_else(|| EvalError::MissingValue {
                target: target.clone(),
                set,
            })?;
        session.observe(set, v, f0).map_err(wrap)?;
        values.push(v);
    }
    Ok(Replay {
        sequence: session.sequence(),
        values,
    })
}

/// Derives the seed of repetition `rep` from the configured seed.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    // splitmix64 step, so neighbouring repetitions get unrelated streams
    let mut z = seed.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum FoldOutcome {
    Included(GapCurve, Vec<Vec<usize>>),
    Excluded(TargetKey),
}

fn run_fold(
    dataset: &KnowledgeBase,
    target: &TargetKey,
    config: &RecommenderConfig,
    budget: usize,
    repetitions: usize,
) -> Result<FoldOutcome, EvalError> {
    let row = dataset.row(target).expect("target from dataset");
    let f0 = row
        .value(dataset.baseline())
        .ok_or_else(|| EvalError::MissingBaseline(target.clone()))?;
    let (_, fstar) = row.best(config.objective).expect("row has the baseline");
    if f0 == fstar {
        return Ok(FoldOutcome::Excluded(target.clone()));
    }
    let fold = dataset.without_program(&target.program);
    let reps = if config.kind.is_randomized() {
        repetitions.max(1)
    } else {
        1
    };
    let mut sum = vec![0.0; budget];
    let mut sequences = Vec::with_capacity(reps);
    let mut single = None;
    for rep in 0..reps {
        let mut cfg = config.clone();
        cfg.seed = repetition_seed(config.seed, rep);
        let replay = replay_target(&fold, dataset, target, &cfg, budget)?;
        let trace: Vec<Option<f64>> = replay.values.iter().copied().map(Some).collect();
        let gaps = gap_curve(&trace, f0, fstar, budget)?;
        for (s, g) in sum.iter_mut().zip(&gaps) {
            *s += g;
        }
        sequences.push(replay.sequence);
        single = Some(gaps);
    }
    let gaps = if reps == 1 {
        single.expect("one repetition")
    } else {
        sum.iter().map(|s| s / reps as f64).collect()
    };
    Ok(FoldOutcome::Included(
        GapCurve {
            target: target.clone(),
            algorithm: config.kind.to_string(),
            gaps,
        },
        sequences,
    ))
}

/// Options of a leave-one-out run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoocvOptions {
    /// Evaluations per session; capped at the catalogue size.
    pub budget: usize,
    /// Repetitions of randomized algorithms; deterministic ones run once.
    pub repetitions: usize,
    /// Worker threads; 1 runs folds sequentially.
    pub jobs: usize,
}

/// Leave-one-out evaluation: every target is tuned against a knowledge base
/// made of all other programs, with the dataset's recorded values serving
/// as measurements.
pub fn run_loocv(
    dataset: &KnowledgeBase,
    config: &RecommenderConfig,
    options: LoocvOptions,
) -> Result<EvaluationReport, EvalError> {
    let budget = options.budget.min(dataset.catalogue_size()).max(1);
    let targets: Vec<&TargetKey> = dataset.targets().collect();
    let run = |t: &&TargetKey| run_fold(dataset, t, config, budget, options.repetitions);
    let outcomes: Vec<Result<FoldOutcome, EvalError>> = if options.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?
            .install(|| targets.par_iter().map(run).collect())
    } else {
        targets.iter().map(run).collect()
    };

    let mut curves = Vec::new();
    let mut sequences = BTreeMap::new();
    let mut excluded = Vec::new();
    for outcome in outcomes {
        match outcome? {
            FoldOutcome::Included(curve, seqs) => {
                sequences.insert(curve.target.clone(), seqs);
                curves.push(curve);
            }
            FoldOutcome::Excluded(t) => excluded.push(t),
        }
    }
    let mut report = EvaluationReport::default();
    report.insert(AlgorithmReport::assemble(
        config.kind.to_string(),
        budget,
        curves,
        sequences,
        excluded,
    ));
    Ok(report)
}

/// What a delay row is measured at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Checkpoint {
    Gap(f64),
    Iteration(usize),
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Checkpoint::Gap(g) => write!(f, "gap={g}"),
            Checkpoint::Iteration(i) => write!(f, "iter={i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayRow {
    pub algorithm: String,
    pub checkpoint: Checkpoint,
    /// `None` when the reference never reaches the requested gap.
    pub delay: Option<Delay>,
}

/// Delays of every algorithm's harmonic curve against `reference`'s.
pub fn delays_against(
    harmonic: &BTreeMap<String, Vec<f64>>,
    reference: &str,
    checkpoints: &[Checkpoint],
) -> Result<Vec<DelayRow>, EvalError> {
    let Some(reference_curve) = harmonic.get(reference) else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for (name, curve) in harmonic {
        for &cp in checkpoints {
            let delay = match cp {
                Checkpoint::Gap(g) => match gap_delay(reference_curve, curve, g) {
                    Ok(d) => Some(d),
                    Err(EvalError::UndefinedReference(_)) => None,
                    Err(e) => return Err(e),
                },
                Checkpoint::Iteration(i) => Some(iteration_delay(reference_curve, curve, i)),
            };
            rows.push(DelayRow {
                algorithm: name.clone(),
                checkpoint: cp,
                delay,
            });
        }
    }
    Ok(rows)
}

impl EvaluationReport {
    pub fn harmonic_curves(&self) -> BTreeMap<String, Vec<f64>> {
        self.algorithms
            .iter()
            .map(|(k, r)| (k.clone(), r.harmonic.clone()))
            .collect()
    }
}

/// Speedup of `best` over `baseline` under `objective` (greater is better).
pub fn speedup(baseline: f64, best: f64, objective: Objective) -> f64 {
    match objective {
        Objective::Minimize => baseline / best,
        Objective::Maximize => best / baseline,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn npi_examples() {
        assert_eq!(npi(3.0, 1.0, 1.0), Ok(1.0));
        assert_eq!(npi(3.0, 3.0, 1.0), Ok(0.0));
        assert_eq!(npi(3.0, 2.0, 1.0), Ok(0.5));
        assert_eq!(npi(2.0, 2.0, 2.0), Err(EvalError::DegenerateTarget(2.0)));
        assert!(npi(3.0, 4.0, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn gap_curve_examples() {
        let trace = [Some(3.0), Some(2.5), Some(2.0), Some(1.0)];
        assert_eq!(
            gap_curve(&trace, 3.0, 1.0, 4).unwrap(),
            vec![1.0, 0.75, 0.5, 0.0]
        );

        let trace = [Some(3.0), Some(2.0), Some(1.0), Some(2.5), Some(4.0)];
        let gaps = gap_curve(&trace, 3.0, 1.0, 5).unwrap();
        assert_eq!(gaps[0], 1.0);
        assert_eq!(&gaps[2..], &[0.0, 0.0, 0.0]);

        let worse = [Some(3.0), Some(5.0), None, Some(2.0)];
        assert_eq!(
            gap_curve(&worse, 3.0, 1.0, 5).unwrap(),
            vec![1.0, 1.0, 1.0, 0.5, 0.5]
        );
        assert!(matches!(
            gap_curve(&trace, 1.0, 1.0, 5),
            Err(EvalError::DegenerateTarget(_))
        ));
    }

    #[test]
    fn harmonic_examples() {
        assert!((harmonic_gap(&[0.4, 0.4, 0.4], 1e-6) - 0.4).abs() < 1e-15);
        let collapsed = harmonic_gap(&[1.0, 0.0], 1e-6);
        assert!((collapsed - 2.0 / (1.0 + 1e6)).abs() < 1e-15);
        assert!((collapsed - 2e-6).abs() < 1e-11);
        assert!((harmonic_gap(&[0.5, 0.25], 1e-6) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quartile_examples() {
        let q = quartiles(&[0.7]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (0.7, 0.7, 0.7));
        let q = quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        let q = quartiles(&[0.0, 1.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (0.25, 0.5, 0.75));
        assert!(quartiles(&[]).is_none());
    }

    fn step_curve(hit: &[(usize, f64)], len: usize) -> Vec<f64> {
        (1..=len)
            .map(|i| {
                hit.iter()
                    .filter(|(at, _)| *at <= i)
                    .map(|(_, g)| *g)
                    .fold(1.0, f64::min)
            })
            .collect()
    }

    #[test]
    fn delay_examples() {
        let reference = step_curve(&[(5, 0.1)], 20);
        let other = step_curve(&[(15, 0.1)], 20);
        assert_eq!(
            gap_delay(&reference, &other, 0.1),
            Ok(Delay::Iterations(10))
        );
        assert_eq!(
            gap_delay(&reference, &reference, 0.1),
            Ok(Delay::Iterations(0))
        );
        let flat = vec![1.0; 20];
        assert_eq!(gap_delay(&reference, &flat, 0.1), Ok(Delay::Never));
        assert_eq!(
            gap_delay(&flat, &reference, 0.1),
            Err(EvalError::UndefinedReference(0.1))
        );

        let reference = step_curve(&[(5, 0.2)], 10);
        let other = step_curve(&[(7, 0.2)], 10);
        assert_eq!(iteration_delay(&reference, &other, 5), Delay::Iterations(2));
        assert_eq!(
            iteration_delay(&reference, &reference, 5),
            Delay::Iterations(0)
        );
        assert_eq!(iteration_delay(&reference, &[1.0; 10], 5), Delay::Never);
        assert_eq!(iteration_delay(&reference, &other, 11), Delay::Never);
        // on the plateau after iteration 5 the delay is still measured from 5
        assert_eq!(iteration_delay(&reference, &other, 8), Delay::Iterations(2));
        assert_eq!(
            iteration_delay(&reference, &reference, 8),
            Delay::Iterations(0)
        );
    }

    #[test]
    fn repetition_seeds_differ() {
        let a = repetition_seed(7, 0);
        let b = repetition_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, repetition_seed(7, 0));
    }
}
