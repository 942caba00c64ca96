//! Domain model: flags, flag sets, tuning targets, measurements and the
//! knowledge base of relevance scores derived from them.
//!
//! A flag set is encoded as a little-endian bitmask over the flag table:
//! bit `i` of the set index is flag `i` of the table. With the default
//! seven-flag table this enumerates the 128 sets `0..128`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Whether the performance indicator should be lowered or raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Objective {
    #[default]
    Minimize,
    Maximize,
}

impl Objective {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Minimize => a < b,
            Objective::Maximize => a > b,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Minimize => "min",
            Objective::Maximize => "max",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" | "minimize" => Ok(Objective::Minimize),
            "max" | "maximize" => Ok(Objective::Maximize),
            other => Err(format!("unknown objective {other:?} (expected min or max)")),
        }
    }
}

/// Errors raised while building model values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid measurement: baseline value {0} is not strictly positive")]
    NonPositiveBaseline(f64),
    #[error("invalid measurement for {target} set {set}: value {value} is not strictly positive")]
    NonPositiveValue {
        target: TargetKey,
        set: usize,
        value: f64,
    },
    #[error("duplicate measurement for {target} set {set}")]
    DuplicateMeasurement { target: TargetKey, set: usize },
    #[error("targets without a baseline measurement (set {baseline}): {}", join_targets(.targets))]
    MissingBaseline {
        baseline: usize,
        targets: Vec<TargetKey>,
    },
    #[error("set index {set} outside the catalogue of {catalogue} sets")]
    SetOutOfRange { set: usize, catalogue: usize },
    #[error("duplicate flag {0:?} in flag table")]
    DuplicateFlag(String),
    #[error("flag table is empty")]
    EmptyFlagTable,
    #[error("flag table has {0} flags; at most 30 are supported")]
    TooManyFlags(usize),
    #[error("flag set has {set} bits but the flag table has {table} flags")]
    WidthMismatch { set: usize, table: usize },
}

fn join_targets(targets: &[TargetKey]) -> String {
    targets
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// One compiler flag and its position in the flag table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Flag {
    pub name: String,
    pub index: usize,
}

/// Flags considered during tuning. Names are unique and indices contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlagTable {
    flags: Vec<Flag>,
}

/// The seven binary optimisation flags of the reference flag space. The last
/// entry selects `-O3` over `-O2`: a set with that bit cleared is compiled at
/// the `-O2` level supplied by the build recipe.
pub const DEFAULT_FLAGS: [&str; 7] = [
    "-funsafe-math-optimisations",
    "-fno-guess-branch-probability",
    "-fno-ivopts",
    "-fno-tree-loop-optimise",
    "-fno-inline-functions",
    "-funroll-all-loops",
    "-O3",
];

impl FlagTable {
    pub fn new<I, S>(names: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut flags = Vec::new();
        for (index, name) in names.into_iter().enumerate() {
            let name = name.into();
            if !seen.insert(name.clone()) {
                return Err(ModelError::DuplicateFlag(name));
            }
            flags.push(Flag { name, index });
        }
        if flags.is_empty() {
            return Err(ModelError::EmptyFlagTable);
        }
        if flags.len() > 30 {
            return Err(ModelError::TooManyFlags(flags.len()));
        }
        Ok(FlagTable { flags })
    }

    /// The default seven-flag table.
    pub fn standard() -> Self {
        FlagTable::new(DEFAULT_FLAGS).expect("default flag table is valid")
    }

    /// A table of `n` anonymous flags `-f0 .. -f{n-1}`, handy for fixtures.
    pub fn anonymous(n: usize) -> Result<Self, ModelError> {
        FlagTable::new((0..n).map(|i| format!("-f{i}")))
    }

    pub fn flags(&self) -> &[Flag] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Number of distinct flag sets, `2^F`.
    pub fn catalogue_size(&self) -> usize {
        1usize << self.flags.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.flags.iter().position(|f| f.name == name)
    }

    /// Conventional baseline: only the `-O3` bit set when the table has one,
    /// otherwise the empty set.
    pub fn default_baseline(&self) -> usize {
        self.position("-O3").map_or(0, |i| 1 << i)
    }

    pub fn set(&self, index: usize) -> Result<FlagSet, ModelError> {
        FlagSet::new(index, self.len())
    }

    pub fn render(&self, index: usize) -> Result<String, ModelError> {
        render_flagset(&self.set(index)?, self)
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlagSet {
    index: usize,
    width: usize,
}

impl FlagSet {
    pub fn new(index: usize, width: usize) -> Result<Self, ModelError> {
        let catalogue = 1usize << width;
        if index >= catalogue {
            return Err(ModelError::SetOutOfRange {
                set: index,
                catalogue,
            });
        }
        Ok(FlagSet { index, width })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let index = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0usize, |acc, (i, _)| acc | (1 << i));
        FlagSet {
            index,
            width: bits.len(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit(&self, flag: usize) -> bool {
        flag < self.width && (self.index >> flag) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.width).map(|i| self.bit(i)).collect()
    }
}

/// Enabled flag names joined by single spaces, in flag-table order.
pub fn render_flagset(set: &FlagSet, table: &FlagTable) -> Result<String, ModelError> {
    if set.width() != table.len() {
        return Err(ModelError::WidthMismatch {
            set: set.width(),
            table: table.len(),
        });
    }
    Ok(table
        .flags()
        .iter()
        .filter(|f| set.bit(f.index))
        .map(|f| f.name.as_str())
        .collect::<Vec<_>>()
        .join(" "))
}

/// A (program, workload) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetKey {
    pub program: String,
    pub workload: String,
}

impl TargetKey {
    pub fn new(program: impl Into<String>, workload: impl Into<String>) -> Self {
        TargetKey {
            program: program.into(),
            workload: workload.into(),
        }
    }
}

impl fmt::Display for TargetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.program, self.workload)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub target: TargetKey,
    pub set: usize,
    pub value: f64,
}

impl Measurement {
    pub fn new(target: TargetKey, set: usize, value: f64) -> Self {
        Measurement { target, set, value }
    }
}

/// Relative change of a measured value against the baseline value.
///
/// Negative means the set lowered the indicator (faster, for execution time).
pub fn relevance(value_at_set: f64, value_at_baseline: f64) -> Result<f64, ModelError> {
    if value_at_baseline.is_nan() || value_at_baseline <= 0.0 {
        return Err(ModelError::NonPositiveBaseline(value_at_baseline));
    }
    Ok(value_at_set / value_at_baseline - 1.0)
}

/// Measured values and relevances of one target, indexed by set.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    values: Vec<Option<f64>>,
    relevances: Vec<Option<f64>>,
}

impl TargetRow {
    pub fn value(&self, set: usize) -> Option<f64> {
        self.values.get(set).copied().flatten()
    }

    pub fn relevance(&self, set: usize) -> Option<f64> {
        self.relevances.get(set).copied().flatten()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn relevances(&self) -> &[Option<f64>] {
        &self.relevances
    }

    pub fn measured_sets(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|_| i))
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Best measured set under `objective`; ties go to the lower index.
    pub fn best(&self, objective: Objective) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (set, value) in self
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
        {
            match best {
                Some((_, b)) if !objective.better(value, b) => {}
                _ => best = Some((set, value)),
            }
        }
        best
    }
}

/// Previously explored targets with their relevance rows and optional raw
/// feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    flags: FlagTable,
    baseline: usize,
    rows: BTreeMap<TargetKey, TargetRow>,
    features: Option<BTreeMap<TargetKey, Vec<f64>>>,
}

impl KnowledgeBase {
    /// An empty knowledge base over `flags`.
    pub fn empty(flags: FlagTable, baseline: usize) -> Result<Self, ModelError> {
        build_knowledge_base(&[], flags, baseline)
    }

    pub fn flags(&self) -> &FlagTable {
        &self.flags
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn catalogue_size(&self) -> usize {
        self.flags.catalogue_size()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = &TargetKey> {
        self.rows.keys()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&TargetKey, &TargetRow)> {
        self.rows.iter()
    }

    pub fn row(&self, target: &TargetKey) -> Option<&TargetRow> {
        self.rows.get(target)
    }

    pub fn value(&self, target: &TargetKey, set: usize) -> Option<f64> {
        self.rows.get(target).and_then(|r| r.value(set))
    }

    pub fn relevance(&self, target: &TargetKey, set: usize) -> Option<f64> {
        self.rows.get(target).and_then(|r| r.relevance(set))
    }

    pub fn features(&self) -> Option<&BTreeMap<TargetKey, Vec<f64>>> {
        self.features.as_ref()
    }

    pub fn target_features(&self, target: &TargetKey) -> Option<&[f64]> {
        self.features
            .as_ref()
            .and_then(|f| f.get(target))
            .map(Vec::as_slice)
    }

    /// Attaches raw feature vectors. Entries for unknown targets are dropped.
    pub fn with_features(mut self, features: BTreeMap<TargetKey, Vec<f64>>) -> Self {
        let kept = features
            .into_iter()
            .filter(|(k, _)| self.rows.contains_key(k))
            .collect();
        self.features = Some(kept);
        self
    }

    /// The knowledge base with every workload of `program` removed.
    pub fn without_program(&self, program: &str) -> KnowledgeBase {
        let keep = |k: &TargetKey| k.program != program;
        KnowledgeBase {
            flags: self.flags.clone(),
            baseline: self.baseline,
            rows: self
                .rows
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, r)| (k.clone(), r.clone()))
                .collect(),
            features: self.features.as_ref().map(|f| {
                f.iter()
                    .filter(|(k, _)| keep(k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect()
            }),
        }
    }

    /// All stored values as measurements, sorted by target then set.
    pub fn measurements(&self) -> Vec<Measurement> {
        self.rows
            .iter()
            .flat_map(|(k, row)| {
                row.values
                    .iter()
                    .enumerate()
                    .filter_map(move |(set, v)| v.map(|v| Measurement::new(k.clone(), set, v)))
            })
            .collect()
    }
}

/// Materialises a knowledge base from unique, strictly positive measurements.
///
/// The result does not depend on the order of `measurements`.
pub fn build_knowledge_base(
    measurements: &[Measurement],
    flags: FlagTable,
    baseline: usize,
) -> Result<KnowledgeBase, ModelError> {
    let catalogue = flags.catalogue_size();
    if baseline >= catalogue {
        return Err(ModelError::SetOutOfRange {
            set: baseline,
            catalogue,
        });
    }
    let mut values: BTreeMap<TargetKey, Vec<Option<f64>>> = BTreeMap::new();
    for m in measurements {
        if m.set >= catalogue {
            return Err(ModelError::SetOutOfRange {
                set: m.set,
                catalogue,
            });
        }
        if m.value <= 0.0 || !m.value.is_finite() {
            return Err(ModelError::NonPositiveValue {
                target: m.target.clone(),
                set: m.set,
                value: m.value,
            });
        }
        let row = values
            .entry(m.target.clone())
            .or_insert_with(|| vec![None; catalogue]);
        if row[m.set].is_some() {
            return Err(ModelError::DuplicateMeasurement {
                target: m.target.clone(),
                set: m.set,
            });
        }
        row[m.set] = Some(m.value);
    }

    let missing: Vec<TargetKey> = values
        .iter()
        .filter(|(_, row)| row[baseline].is_none())
        .map(|(k, _)| k.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::MissingBaseline {
            baseline,
            targets: missing,
        });
    }

    let rows = values
        .into_iter()
        .map(|(k, vals)| {
            let base = vals[baseline].expect("baseline checked");
            let relevances = vals
                .iter()
                .enumerate()
                .map(|(set, v)| v.map(|v| if set == baseline { 0.0 } else { v / base - 1.0 }))
                .collect();
            (
                k,
                TargetRow {
                    values: vals,
                    relevances,
                },
            )
        })
        .collect();

    Ok(KnowledgeBase {
        flags,
        baseline,
        rows,
        features: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_programs() -> Vec<Measurement> {
        let table = [
            [3.0, 4.0, 2.0],
            [1.0, 4.0, 1.0],
            [5.0, 3.0, 4.0],
            [4.0, 5.0, 3.0],
        ];
        let mut out = Vec::new();
        for (set, row) in table.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                out.push(Measurement::new(
                    TargetKey::new(format!("q{q}"), "w"),
                    set,
                    *v,
                ));
            }
        }
        out
    }

    #[test]
    fn relevance_examples() {
        assert!((relevance(1.0, 3.0).unwrap() + 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(relevance(4.0, 2.0).unwrap(), 1.0);
        assert_eq!(relevance(7.5, 7.5).unwrap(), 0.0);
        assert!(matches!(
            relevance(1.0, 0.0),
            Err(ModelError::NonPositiveBaseline(_))
        ));
        assert!(relevance(1.0, -2.0).is_err());
    }

    #[test]
    fn three_program_relevance_table() {
        let kb = build_knowledge_base(&three_programs(), FlagTable::anonymous(2).unwrap(), 0).unwrap();
        let expected = [
            [0.0, 0.0, 0.0],
            [-2.0 / 3.0, 0.0, -0.5],
            [2.0 / 3.0, -0.25, 1.0],
            [1.0 / 3.0, 0.25, 0.5],
        ];
        for (set, row) in expected.iter().enumerate() {
            for (q, r) in row.iter().enumerate() {
                let got = kb
                    .relevance(&TargetKey::new(format!("q{q}"), "w"), set)
                    .unwrap();
                assert!((got - r).abs() < 1e-12, "q{q} x{set}: {got} vs {r}");
            }
        }
    }

    #[test]
    fn empty_and_duplicate() {
        let kb = build_knowledge_base(&[], FlagTable::anonymous(2).unwrap(), 0).unwrap();
        assert!(kb.is_empty());

        let mut ms = three_programs();
        ms.push(Measurement::new(TargetKey::new("q0", "w"), 1, 1.0));
        let err = build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0).unwrap_err();
        assert_eq!(
            err,
            ModelError::DuplicateMeasurement {
                target: TargetKey::new("q0", "w"),
                set: 1
            }
        );
    }

    #[test]
    fn missing_baseline_lists_targets() {
        let ms: Vec<_> = three_programs()
            .into_iter()
            .filter(|m| !(m.set == 0 && m.target.program != "q1"))
            .collect();
        let err = build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0).unwrap_err();
        match err {
            ModelError::MissingBaseline { targets, .. } => {
                assert_eq!(
                    targets,
                    vec![TargetKey::new("q0", "w"), TargetKey::new("q2", "w")]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_values() {
        let mut ms = three_programs();
        ms[4].value = 0.0;
        assert!(matches!(
            build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0),
            Err(ModelError::NonPositiveValue { .. })
        ));
    }

    #[test]
    fn rendering() {
        let table = FlagTable::standard();
        assert_eq!(table.catalogue_size(), 128);
        assert_eq!(table.render(0).unwrap(), "");
        assert_eq!(table.render(1 << 5).unwrap(), "-funroll-all-loops");
        assert_eq!(
            table.render(0b11).unwrap(),
            "-funsafe-math-optimisations -fno-guess-branch-probability"
        );
        let narrow = FlagSet::new(1, 2).unwrap();
        assert!(matches!(
            render_flagset(&narrow, &table),
            Err(ModelError::WidthMismatch { .. })
        ));
        assert_eq!(table.default_baseline(), 64);
    }

    #[test]
    fn flagset_bits_round_trip() {
        for index in 0..128 {
            let set = FlagSet::new(index, 7).unwrap();
            assert_eq!(FlagSet::from_bits(&set.bits()), set);
        }
        assert!(FlagSet::new(128, 7).is_err());
    }

    #[test]
    fn duplicate_flag_rejected() {
        assert_eq!(
            FlagTable::new(["-fa", "-fb", "-fa"]).unwrap_err(),
            ModelError::DuplicateFlag("-fa".into())
        );
        assert_eq!(
            FlagTable::new(Vec::<String>::new()).unwrap_err(),
            ModelError::EmptyFlagTable
        );
    }

    #[test]
    fn without_program_drops_all_workloads() {
        let mut ms = three_programs();
        ms.extend(
            three_programs()
                .into_iter()
                .map(|m| Measurement::new(TargetKey::new(m.target.program, "w2"), m.set, m.value)),
        );
        let kb = build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0).unwrap();
        assert_eq!(kb.len(), 6);
        let fold = kb.without_program("q1");
        assert_eq!(fold.len(), 4);
        assert!(fold.targets().all(|t| t.program != "q1"));
    }

    #[test]
    fn best_set_respects_objective() {
        let kb = build_knowledge_base(&three_programs(), FlagTable::anonymous(2).unwrap(), 0).unwrap();
        let q1 = kb.row(&TargetKey::new("q1", "w")).unwrap();
        assert_eq!(q1.best(Objective::Minimize), Some((2, 3.0)));
        assert_eq!(q1.best(Objective::Maximize), Some((3, 5.0)));
    }
}
