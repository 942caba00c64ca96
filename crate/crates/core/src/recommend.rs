//! Flag-set recommenders: Random search, Top Popular, Content-Based
//! Filtering and Collaborative Filtering driven by Reaction Matching.
//!
//! Every recommender evaluates the baseline first and never suggests a set
//! twice. Predicted relevances follow the relevance sign convention, so under
//! a minimising objective the best candidate is the one with the lowest
//! predicted relevance.
//!
//! TP and CBF rank the catalogue once and replay that ranking. CF is online:
//! after every observation the distances between the session's reaction
//! vector and every knowledge-base target are recomputed and the k nearest
//! targets vote again.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{fit_pca, ComponentSelection, FeatureError};
use crate::metrics::{distance, similarity_from_distance, DistanceMetric, DEFAULT_EPSILON};
use crate::model::{relevance, KnowledgeBase, ModelError, Objective, TargetKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecommendError {
    #[error("knowledge base has no targets")]
    EmptyKnowledgeBase,
    #[error("set {0} was already evaluated in this session")]
    AlreadyEvaluated(usize),
    #[error("set {set} outside the catalogue of {catalogue} sets")]
    SetOutOfRange { set: usize, catalogue: usize },
    #[error("session budget of {0} evaluations is exhausted")]
    BudgetExhausted(usize),
    #[error("the first evaluation of a session must be the baseline set {0}")]
    BaselineFirst(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reaction matching needs at least 2 measured sets, the session has {0}")]
    InsufficientReactions(usize),
    #[error("no knowledge-base target carries a feature vector")]
    NoFeatures,
    #[error("target {0} has no feature vector")]
    MissingTargetFeatures(TargetKey),
    #[error("neighbour count k must be at least 1")]
    ZeroNeighbours,
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Which recommender to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlgorithmKind {
    Random,
    TopPopular,
    ContentBased,
    Collaborative,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [
        AlgorithmKind::Random,
        AlgorithmKind::TopPopular,
        AlgorithmKind::ContentBased,
        AlgorithmKind::Collaborative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::Random => "random",
            AlgorithmKind::TopPopular => "tp",
            AlgorithmKind::ContentBased => "cbf",
            AlgorithmKind::Collaborative => "cf",
        }
    }

    pub fn is_randomized(self) -> bool {
        self == AlgorithmKind::Random
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected random, tp, cbf or cf)"))
    }
}

/// Benchmark-suite flavour used to pick the tuned neighbour counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Suite {
    #[default]
    CBench,
    PolyBench,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommenderConfig {
    pub kind: AlgorithmKind,
    pub k: usize,
    pub metric: DistanceMetric,
    pub objective: Objective,
    pub seed: u64,
    pub epsilon: f64,
    /// PCA component selection for content-based filtering.
    pub components: ComponentSelection,
}

impl RecommenderConfig {
    /// Tuned defaults: CBF uses euclidean with k = 5; CF uses correlation
    /// with k = 15 on cBench-like suites and k = 20 on PolyBench-like ones.
    pub fn tuned(kind: AlgorithmKind, suite: Suite) -> Self {
        let (metric, k) = match (kind, suite) {
            (AlgorithmKind::ContentBased, _) => (DistanceMetric::Euclidean, 5),
            (AlgorithmKind::Collaborative, Suite::CBench) => (DistanceMetric::Correlation, 15),
            (AlgorithmKind::Collaborative, Suite::PolyBench) => (DistanceMetric::Correlation, 20),
            _ => (DistanceMetric::Euclidean, 1),
        };
        RecommenderConfig {
            kind,
            k,
            metric,
            objective: Objective::Minimize,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            components: ComponentSelection::default(),
        }
    }

    pub fn new(kind: AlgorithmKind) -> Self {
        RecommenderConfig::tuned(kind, Suite::CBench)
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One evaluated set. `value` and `relevance` are `None` for a set whose
/// build or run failed: it consumed budget but carries no reaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub set: usize,
    pub value: Option<f64>,
    pub relevance: Option<f64>,
}

/// State of one iterative-compilation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSession {
    target: TargetKey,
    baseline: usize,
    catalogue: usize,
    budget: usize,
    objective: Objective,
    evaluated: Vec<Evaluation>,
    seen: HashSet<usize>,
}

impl TuningSession {
    /// A fresh session. The budget is capped at the catalogue size.
    pub fn new(
        target: TargetKey,
        baseline: usize,
        catalogue: usize,
        budget: usize,
        objective: Objective,
    ) -> Self {
        TuningSession {
            target,
            baseline,
            catalogue,
            budget: budget.min(catalogue),
            objective,
            evaluated: Vec::new(),
            seen: HashSet::new(),
        }
    }

    /// A session over `kb`'s catalogue and baseline.
    pub fn for_kb(
        target: TargetKey,
        kb: &KnowledgeBase,
        budget: usize,
        objective: Objective,
    ) -> Self {
        TuningSession::new(
            target,
            kb.baseline(),
            kb.catalogue_size(),
            budget,
            objective,
        )
    }

    pub fn target(&self) -> &TargetKey {
        &self.target
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn catalogue_size(&self) -> usize {
        self.catalogue
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn evaluated(&self) -> &[Evaluation] {
        &self.evaluated
    }

    pub fn len(&self) -> usize {
        self.evaluated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluated.is_empty()
    }

    pub fn is_evaluated(&self, set: usize) -> bool {
        self.seen.contains(&set)
    }

    pub fn is_exhausted(&self) -> bool {
        self.evaluated.len() >= self.budget
    }

    pub fn baseline_value(&self) -> Option<f64> {
        self.evaluated.first().and_then(|e| e.value)
    }

    pub fn sequence(&self) -> Vec<usize> {
        self.evaluated.iter().map(|e| e.set).collect()
    }

    /// Sets with a valid measurement, paired with the session's relevance.
    pub fn reactions(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.evaluated
            .iter()
            .filter_map(|e| e.relevance.map(|r| (e.set, r)))
    }

    /// Best valid evaluation so far under the session objective.
    pub fn best(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for e in &self.evaluated {
            if let Some(v) = e.value {
                match best {
                    Some((_, b)) if !self.objective.better(v, b) => {}
                    _ => best = Some((e.set, v)),
                }
            }
        }
        best
    }

    fn check_new(&self, set: usize) -> Result<(), RecommendError> {
        if set >= self.catalogue {
            return Err(RecommendError::SetOutOfRange {
                set,
                catalogue: self.catalogue,
            });
        }
        if self.is_evaluated(set) {
            return Err(RecommendError::AlreadyEvaluated(set));
        }
        if self.is_exhausted() {
            return Err(RecommendError::BudgetExhausted(self.budget));
        }
        if self.evaluated.is_empty() && set != self.baseline {
            return Err(RecommendError::BaselineFirst(self.baseline));
        }
        Ok(())
    }

    /// Records a measured set; its relevance is taken against `baseline_value`.
    pub fn observe(
        &mut self,
        set: usize,
        measured_value: f64,
        baseline_value: f64,
    ) -> Result<f64, RecommendError> {
        self.check_new(set)?;
        if measured_value <= 0.0 || !measured_value.is_finite() {
            return Err(ModelError::NonPositiveValue {
                target: self.target.clone(),
                set,
                value: measured_value,
            }
            .into());
        }
        let r = if set == self.baseline {
            relevance(measured_value, measured_value)?
        } else {
            relevance(measured_value, baseline_value)?
        };
        self.evaluated.push(Evaluation {
            set,
            value: Some(measured_value),
            relevance: Some(r),
        });
        self.seen.insert(set);
        Ok(r)
    }

    /// Records a set whose build or run failed. The baseline cannot fail.
    pub fn observe_failure(&mut self, set: usize) -> Result<(), RecommendError> {
        self.check_new(set)?;
        if set == self.baseline {
            return Err(RecommendError::BaselineFirst(self.baseline));
        }
        self.evaluated.push(Evaluation {
            set,
            value: None,
            relevance: None,
        });
        self.seen.insert(set);
        Ok(())
    }
}

/// Predicted relevance per set of the catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedRelevances {
    pub scores: Vec<f64>,
    /// `covered[x]` is false when no target contributed to `scores[x]`.
    pub covered: Vec<bool>,
}

impl PredictedRelevances {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Mean relevance of every set over the knowledge-base targets that
/// measured it.
pub fn top_popular_scores(kb: &KnowledgeBase) -> Result<PredictedRelevances, RecommendError> {
    if kb.is_empty() {
        return Err(RecommendError::EmptyKnowledgeBase);
    }
    let n = kb.catalogue_size();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (_, row) in kb.rows() {
        for (set, r) in row.relevances().iter().enumerate() {
            if let Some(r) = r {
                sums[set] += r;
                counts[set] += 1;
            }
        }
    }
    Ok(PredictedRelevances {
        scores: sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect(),
        covered: counts.iter().map(|&c| c > 0).collect(),
    })
}

/// Position of every set in a reference ranking; lower is more popular.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity(Vec<usize>);

impl Popularity {
    pub fn from_ranking(ranking: &[usize], catalogue: usize) -> Self {
        let mut pos = vec![usize::MAX; catalogue];
        for (i, &set) in ranking.iter().enumerate() {
            pos[set] = i;
        }
        Popularity(pos)
    }

    /// Popularity given by top-popular scores, or set-index order for an
    /// empty knowledge base.
    pub fn of(kb: &KnowledgeBase, objective: Objective) -> Self {
        let n = kb.catalogue_size();
        match top_popular_scores(kb) {
            Ok(scores) => {
                Popularity::from_ranking(&rank_sets(&scores, objective, &HashSet::new(), None), n)
            }
            Err(_) => Popularity::from_ranking(&(0..n).collect::<Vec<_>>(), n),
        }
    }

    pub fn rank(&self, set: usize) -> usize {
        self.0.get(set).copied().unwrap_or(usize::MAX)
    }
}

/// Unevaluated sets sorted best-first. Ties in the predicted score fall back
/// to `popularity` and then to the lower set index.
pub fn rank_sets(
    scores: &PredictedRelevances,
    objective: Objective,
    exclude: &HashSet<usize>,
    popularity: Option<&Popularity>,
) -> Vec<usize> {
    let mut sets: Vec<usize> = (0..scores.len()).filter(|s| !exclude.contains(s)).collect();
    sets.sort_by(|&a, &b| {
        let by_score = match objective {
            Objective::Minimize => scores.scores[a].total_cmp(&scores.scores[b]),
            Objective::Maximize => scores.scores[b].total_cmp(&scores.scores[a]),
        };
        by_score
            .then_with(|| match popularity {
                Some(p) => p.rank(a).cmp(&p.rank(b)),
                None => Ordering::Equal,
            })
            .then(a.cmp(&b))
    });
    sets
}

/// Similarities of knowledge-base targets to the program being tuned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Similarities {
    pub values: BTreeMap<TargetKey, f64>,
    /// Targets left out because a distance could not be computed.
    pub skipped: usize,
}

impl Similarities {
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The target with the highest similarity (lowest key on ties).
    pub fn nearest(&self) -> Option<(&TargetKey, f64)> {
        neighbours(&self.values, 1).into_iter().next()
    }
}

/// The `k` most similar targets, most similar first; ties go to the lower key.
fn neighbours(similarities: &BTreeMap<TargetKey, f64>, k: usize) -> Vec<(&TargetKey, f64)> {
    let mut all: Vec<(&TargetKey, f64)> = similarities.iter().map(|(t, &s)| (t, s)).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    all.truncate(k);
    all
}

/// Similarity-weighted mean relevance over the `k` nearest targets.
///
/// Neighbours are chosen once; a neighbour that never measured a set simply
/// does not vote for it. Sets no neighbour measured keep the `fallback` score
/// and are marked uncovered.
pub fn knn_predict(
    kb: &KnowledgeBase,
    similarities: &BTreeMap<TargetKey, f64>,
    k: usize,
    fallback: Option<&PredictedRelevances>,
) -> PredictedRelevances {
    let n = kb.catalogue_size();
    let nn = neighbours(similarities, k);
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for (target, s) in nn {
        let Some(row) = kb.row(target) else { continue };
        for (set, r) in row.relevances().iter().enumerate() {
            if let Some(r) = r {
                num[set] += s * r;
                den[set] += s;
            }
        }
    }
    let mut scores = Vec::with_capacity(n);
    let mut covered = Vec::with_capacity(n);
    for set in 0..n {
        if den[set] > 0.0 {
            scores.push(num[set] / den[set]);
            covered.push(true);
        } else {
            scores.push(fallback.map_or(0.0, |f| f.scores[set]));
            covered.push(false);
        }
    }
    PredictedRelevances { scores, covered }
}

/// Similarities from distances between feature vectors.
///
/// `target_features` and the knowledge-base vectors must live in the same
/// (usually PCA-reduced) space; see [`ContentModel`] for the full pipeline.
pub fn cbf_similarities(
    target_features: &[f64],
    features: &BTreeMap<TargetKey, Vec<f64>>,
    metric: DistanceMetric,
    epsilon: f64,
) -> Result<Similarities, RecommendError> {
    if features.is_empty() {
        return Err(RecommendError::NoFeatures);
    }
    let mut out = Similarities::default();
    for (target, f) in features {
        match distance(metric, target_features, f) {
            Ok(d) => {
                out.values
                    .insert(target.clone(), similarity_from_distance(d, epsilon));
            }
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Reaction-matching similarities: each knowledge-base target is compared on
/// the sets the session has measured and the target also measured. Targets
/// sharing fewer than two such sets, or whose distance is undefined, are left
/// out.
pub fn rm_similarities(
    session: &TuningSession,
    kb: &KnowledgeBase,
    metric: DistanceMetric,
    epsilon: f64,
) -> Result<Similarities, RecommendError> {
    let reactions: Vec<(usize, f64)> = session.reactions().collect();
    if reactions.len() < 2 {
        return Err(RecommendError::InsufficientReactions(reactions.len()));
    }
    let mut out = Similarities::default();
    let mut mine = Vec::with_capacity(reactions.len());
    let mut theirs = Vec::with_capacity(reactions.len());
    for (target, row) in kb.rows() {
        mine.clear();
        theirs.clear();
        for &(set, r) in &reactions {
            if let Some(rq) = row.relevance(set) {
                mine.push(r);
                theirs.push(rq);
            }
        }
        if mine.len() < 2 {
            continue;
        }
        match distance(metric, &mine, &theirs) {
            Ok(d) => {
                out.values
                    .insert(target.clone(), similarity_from_distance(d, epsilon));
            }
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Next set for a collaborative-filtering session, or `None` once the
/// budget or the catalogue is exhausted.
pub fn cf_next(
    session: &TuningSession,
    kb: &KnowledgeBase,
    config: &RecommenderConfig,
) -> Result<Option<usize>, RecommendError> {
    let cf = Collaborative::new(kb, config)?;
    Ok(cf.next_for(session))
}

/// Next set for a random search without repetitions. The order of the
/// non-baseline sets is a uniform permutation fixed by `seed`.
pub fn random_next(session: &TuningSession, seed: u64) -> Option<usize> {
    RandomSearch::new(session.catalogue_size(), session.baseline(), seed).next_for(session)
}

fn first_unevaluated(ranking: &[usize], session: &TuningSession) -> Option<usize> {
    ranking.iter().copied().find(|&s| !session.is_evaluated(s))
}

/// Common interface of all recommenders.
pub trait Recommender {
    fn kind(&self) -> AlgorithmKind;

    /// Next set to evaluate, or `None` when the session is done.
    fn next_for(&self, session: &TuningSession) -> Option<usize>;
}

pub struct RandomSearch {
    baseline: usize,
    order: Vec<usize>,
}

impl RandomSearch {
    pub fn new(catalogue: usize, baseline: usize, seed: u64) -> Self {
        let mut rest: Vec<usize> = (0..catalogue).filter(|&s| s != baseline).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rest.shuffle(&mut rng);
        let mut order = Vec::with_capacity(catalogue);
        order.push(baseline);
        order.extend(rest);
        RandomSearch { baseline, order }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Recommender for RandomSearch {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Random
    }

    fn next_for(&self, session: &TuningSession) -> Option<usize> {
        if session.is_exhausted() {
            return None;
        }
        if session.is_empty() {
            return Some(self.baseline);
        }
        first_unevaluated(&self.order, session)
    }
}

/// A fixed ranking replayed after the baseline. Backs both TP and CBF.
pub struct StaticRanking {
    kind: AlgorithmKind,
    baseline: usize,
    ranking: Vec<usize>,
}

impl StaticRanking {
    pub fn top_popular(kb: &KnowledgeBase, objective: Objective) -> Self {
        let n = kb.catalogue_size();
        let ranking = match top_popular_scores(kb) {
            Ok(scores) => rank_sets(&scores, objective, &HashSet::new(), None),
            Err(_) => {
                log::warn!("empty knowledge base: falling back to set-index order");
                (0..n).collect()
            }
        };
        StaticRanking {
            kind: AlgorithmKind::TopPopular,
            baseline: kb.baseline(),
            ranking,
        }
    }

    pub fn content_based(
        kb: &KnowledgeBase,
        target_features: &[f64],
        config: &RecommenderConfig,
    ) -> Result<Self, RecommendError> {
        if config.k == 0 {
            return Err(RecommendError::ZeroNeighbours);
        }
        let model = ContentModel::fit(kb, config.components)?;
        let sims = model.similarities(target_features, config.metric, config.epsilon)?;
        if sims.skipped > 0 {
            log::warn!(
                "{} knowledge-base targets skipped: undefined feature distance",
                sims.skipped
            );
        }
        let tp = top_popular_scores(kb).ok();
        let popularity = Popularity::of(kb, config.objective);
        let predicted = knn_predict(kb, &sims.values, config.k, tp.as_ref());
        let ranking = rank_sets(
            &predicted,
            config.objective,
            &HashSet::new(),
            Some(&popularity),
        );
        Ok(StaticRanking {
            kind: AlgorithmKind::ContentBased,
            baseline: kb.baseline(),
            ranking,
        })
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }
}

impl Recommender for StaticRanking {
    fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    fn next_for(&self, session: &TuningSession) -> Option<usize> {
        if session.is_exhausted() {
            return None;
        }
        if session.is_empty() {
            return Some(self.baseline);
        }
        first_unevaluated(&self.ranking, session)
    }
}

/// PCA fitted on the knowledge-base feature vectors, with every target's
/// reduced coordinates.
pub struct ContentModel {
    pca: crate::features::PcaModel,
    reduced: BTreeMap<TargetKey, Vec<f64>>,
    skipped: usize,
}

impl ContentModel {
    pub fn fit(kb: &KnowledgeBase, components: ComponentSelection) -> Result<Self, RecommendError> {
        let features = kb.features().ok_or(RecommendError::NoFeatures)?;
        let with: Vec<(&TargetKey, &Vec<f64>)> = kb
            .targets()
            .filter_map(|t| features.get(t).map(|f| (t, f)))
            .collect();
        if with.is_empty() {
            return Err(RecommendError::NoFeatures);
        }
        let skipped = kb.len() - with.len();
        if skipped > 0 {
            log::warn!("{skipped} knowledge-base targets have no feature vector");
        }
        let matrix: Vec<Vec<f64>> = with.iter().map(|(_, f)| (*f).clone()).collect();
        let pca = fit_pca(&matrix, components)?;
        let reduced = with
            .iter()
            .map(|(t, f)| Ok(((*t).clone(), pca.transform(f)?)))
            .collect::<Result<_, FeatureError>>()?;
        Ok(ContentModel {
            pca,
            reduced,
            skipped,
        })
    }

    pub fn pca(&self) -> &crate::features::PcaModel {
        &self.pca
    }

    pub fn reduced(&self) -> &BTreeMap<TargetKey, Vec<f64>> {
        &self.reduced
    }

    /// Knowledge-base targets without a feature vector.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn similarities(
        &self,
        raw_target_features: &[f64],
        metric: DistanceMetric,
        epsilon: f64,
    ) -> Result<Similarities, RecommendError> {
        let reduced = self.pca.transform(raw_target_features)?;
        let mut sims = cbf_similarities(&reduced, &self.reduced, metric, epsilon)?;
        sims.skipped += self.skipped;
        Ok(sims)
    }
}

/// Online collaborative filtering with reaction-matching similarities.
pub struct Collaborative<'a> {
    kb: &'a KnowledgeBase,
    config: RecommenderConfig,
    tp_scores: Option<PredictedRelevances>,
    tp_ranking: Vec<usize>,
    popularity: Popularity,
}

impl<'a> Collaborative<'a> {
    pub fn new(kb: &'a KnowledgeBase, config: &RecommenderConfig) -> Result<Self, RecommendError> {
        if config.k == 0 {
            return Err(RecommendError::ZeroNeighbours);
        }
        let n = kb.catalogue_size();
        let tp_scores = top_popular_scores(kb).ok();
        let tp_ranking = match &tp_scores {
            Some(s) => rank_sets(s, config.objective, &HashSet::new(), None),
            None => (0..n).collect(),
        };
        let popularity = Popularity::from_ranking(&tp_ranking, n);
        Ok(Collaborative {
            kb,
            config: config.clone(),
            tp_scores,
            tp_ranking,
            popularity,
        })
    }

    /// Scores used for the next suggestion, or `None` when reaction matching
    /// cannot run yet and the frozen top-popular order applies.
    pub fn predict(&self, session: &TuningSession) -> Option<PredictedRelevances> {
        if session.len() < 2 {
            return None;
        }
        let sims =
            rm_similarities(session, self.kb, self.config.metric, self.config.epsilon).ok()?;
        if sims.is_empty() {
            return None;
        }
        Some(knn_predict(
            self.kb,
            &sims.values,
            self.config.k,
            self.tp_scores.as_ref(),
        ))
    }
}

impl Recommender for Collaborative<'_> {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Collaborative
    }

    fn next_for(&self, session: &TuningSession) -> Option<usize> {
        if session.is_exhausted() {
            return None;
        }
        if session.is_empty() {
            return Some(session.baseline());
        }
        match self.predict(session) {
            Some(pred) => {
                let exclude: HashSet<usize> = session.evaluated().iter().map(|e| e.set).collect();
                rank_sets(
                    &pred,
                    self.config.objective,
                    &exclude,
                    Some(&self.popularity),
                )
                .first()
                .copied()
            }
            None => first_unevaluated(&self.tp_ranking, session),
        }
    }
}

/// Builds the recommender selected by `config`. `target_features` holds the
/// raw feature vector of the program being tuned and is required for CBF.
pub fn build_recommender<'a>(
    kb: &'a KnowledgeBase,
    config: &RecommenderConfig,
    target_features: Option<&[f64]>,
) -> Result<Box<dyn Recommender + 'a>, RecommendError> {
    Ok(match config.kind {
        AlgorithmKind::Random => Box::new(RandomSearch::new(
            kb.catalogue_size(),
            kb.baseline(),
            config.seed,
        )),
        AlgorithmKind::TopPopular => Box::new(StaticRanking::top_popular(kb, config.objective)),
        AlgorithmKind::ContentBased => {
            let f = target_features.ok_or(RecommendError::NoFeatures)?;
            Box::new(StaticRanking::content_based(kb, f, config)?)
        }
        AlgorithmKind::Collaborative => Box::new(Collaborative::new(kb, config)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_knowledge_base, FlagTable, Measurement};

    fn three_program_kb() -> KnowledgeBase {
        let table = [
            [3.0, 4.0, 2.0],
            [1.0, 4.0, 1.0],
            [5.0, 3.0, 4.0],
            [4.0, 5.0, 3.0],
        ];
        let mut ms = Vec::new();
        for (set, row) in table.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                ms.push(Measurement::new(
                    TargetKey::new(format!("q{q}"), "w"),
                    set,
                    *v,
                ));
            }
        }
        build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0).unwrap()
    }

    fn q(i: usize) -> TargetKey {
        TargetKey::new(format!("q{i}"), "w")
    }

    fn p_session(kb: &KnowledgeBase) -> TuningSession {
        let mut s = TuningSession::for_kb(TargetKey::new("p", "w"), kb, 4, Objective::Minimize);
        s.observe(0, 3.0, 3.0).unwrap();
        s.observe(1, 2.85, 3.0).unwrap();
        s
    }

    #[test]
    fn top_popular_three_programs() {
        let scores = top_popular_scores(&three_program_kb()).unwrap();
        let expected = [0.0, -7.0 / 18.0, 17.0 / 36.0, 13.0 / 36.0];
        for (got, want) in scores.scores.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        let ranking = rank_sets(&scores, Objective::Minimize, &HashSet::new(), None);
        assert_eq!(ranking, vec![1, 0, 3, 2]);
        let all: HashSet<usize> = (0..4).collect();
        assert!(rank_sets(&scores, Objective::Minimize, &all, None).is_empty());
    }

    #[test]
    fn top_popular_single_target_and_empty() {
        let kb = three_program_kb();
        let single = kb.without_program("q0").without_program("q2");
        let scores = top_popular_scores(&single).unwrap();
        assert_eq!(scores.scores, vec![0.0, 0.0, -0.25, 0.25]);
        let empty = KnowledgeBase::empty(FlagTable::anonymous(2).unwrap(), 0).unwrap();
        assert_eq!(
            top_popular_scores(&empty),
            Err(RecommendError::EmptyKnowledgeBase)
        );
    }

    #[test]
    fn rank_ties_by_index() {
        let scores = PredictedRelevances {
            scores: vec![0.5; 4],
            covered: vec![true; 4],
        };
        assert_eq!(
            rank_sets(&scores, Objective::Minimize, &HashSet::new(), None),
            vec![0, 1, 2, 3]
        );
        let pop = Popularity::from_ranking(&[2, 3, 0, 1], 4);
        assert_eq!(
            rank_sets(&scores, Objective::Maximize, &HashSet::new(), Some(&pop)),
            vec![2, 3, 0, 1]
        );
    }

    #[test]
    fn knn_examples() {
        let kb = three_program_kb();
        let sims: BTreeMap<_, _> = [(q(0), 0.5), (q(1), 3.0), (q(2), 1.0)].into();
        let pred = knn_predict(&kb, &sims, 1, None);
        assert_eq!(pred.scores, vec![0.0, 0.0, -0.25, 0.25]);

        let sims: BTreeMap<_, _> = [(q(0), 2.0), (q(1), 1.0)].into();
        let pred = knn_predict(&kb, &sims, 2, None);
        let want = (2.0 * (2.0 / 3.0) + 1.0 * -0.25) / 3.0;
        assert!((pred.scores[2] - want).abs() < 1e-12);
        assert!((pred.scores[2] - 0.3611).abs() < 1e-3);

        let equal: BTreeMap<_, _> = (0..3).map(|i| (q(i), 1.0)).collect();
        let pred = knn_predict(&kb, &equal, 3, None);
        let tp = top_popular_scores(&kb).unwrap();
        for (a, b) in pred.scores.iter().zip(&tp.scores) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_uncovered_sets_use_fallback() {
        let ms = vec![
            Measurement::new(q(0), 0, 2.0),
            Measurement::new(q(0), 1, 1.0),
            Measurement::new(q(1), 0, 2.0),
            Measurement::new(q(1), 3, 3.0),
        ];
        let kb = build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0).unwrap();
        let tp = top_popular_scores(&kb).unwrap();
        let sims: BTreeMap<_, _> = [(q(0), 1.0)].into();
        let pred = knn_predict(&kb, &sims, 1, Some(&tp));
        assert_eq!(pred.covered, vec![true, true, false, false]);
        assert_eq!(pred.scores[3], tp.scores[3]);
    }

    #[test]
    fn reaction_matching_walkthrough() {
        let kb = three_program_kb();
        let session = p_session(&kb);
        let sims =
            rm_similarities(&session, &kb, DistanceMetric::Euclidean, DEFAULT_EPSILON).unwrap();
        let d = |t: usize| 1.0 / sims.values[&q(t)];
        assert!((d(0) - 0.4361).abs() < 1e-4);
        assert!((d(1) - 0.0354).abs() < 1e-4);
        assert!((d(2) - 0.3182).abs() < 1e-4);
        assert_eq!(sims.nearest().unwrap().0, &q(1));
    }

    #[test]
    fn reaction_matching_needs_two_sets() {
        let kb = three_program_kb();
        let mut s = TuningSession::for_kb(TargetKey::new("p", "w"), &kb, 4, Objective::Minimize);
        s.observe(0, 3.0, 3.0).unwrap();
        assert_eq!(
            rm_similarities(&s, &kb, DistanceMetric::Euclidean, DEFAULT_EPSILON),
            Err(RecommendError::InsufficientReactions(1))
        );
    }

    #[test]
    fn reaction_matching_excludes_disjoint_targets() {
        let mut ms = three_program_kb().measurements();
        ms.push(Measurement::new(TargetKey::new("odd", "w"), 0, 1.0));
        ms.push(Measurement::new(TargetKey::new("odd", "w"), 2, 1.0));
        ms.push(Measurement::new(TargetKey::new("odd", "w"), 3, 1.0));
        let kb = build_knowledge_base(&ms, FlagTable::anonymous(2).unwrap(), 0).unwrap();
        let sims = rm_similarities(&p_session(&kb), &kb, DistanceMetric::Euclidean, 1e-9).unwrap();
        assert!(!sims.values.contains_key(&TargetKey::new("odd", "w")));
        assert_eq!(sims.values.len(), 3);
    }

    #[test]
    fn cf_walkthrough() {
        let kb = three_program_kb();
        let config = RecommenderConfig::new(AlgorithmKind::Collaborative)
            .with_k(1)
            .with_metric(DistanceMetric::Euclidean);
        let mut s = TuningSession::for_kb(TargetKey::new("p", "w"), &kb, 4, Objective::Minimize);
        assert_eq!(cf_next(&s, &kb, &config).unwrap(), Some(0));
        s.observe(0, 3.0, 3.0).unwrap();
        assert_eq!(cf_next(&s, &kb, &config).unwrap(), Some(1));
        s.observe(1, 2.85, 3.0).unwrap();
        assert_eq!(cf_next(&s, &kb, &config).unwrap(), Some(2));
        s.observe(2, 2.0, 3.0).unwrap();
        assert_eq!(cf_next(&s, &kb, &config).unwrap(), Some(3));
        s.observe(3, 2.5, 3.0).unwrap();
        assert_eq!(cf_next(&s, &kb, &config).unwrap(), None);
    }

    #[test]
    fn cf_on_empty_kb_uses_index_order() {
        let kb = KnowledgeBase::empty(FlagTable::anonymous(2).unwrap(), 2).unwrap();
        let cf =
            Collaborative::new(&kb, &RecommenderConfig::new(AlgorithmKind::Collaborative)).unwrap();
        let mut s = TuningSession::for_kb(TargetKey::new("p", "w"), &kb, 4, Objective::Minimize);
        let mut seq = Vec::new();
        while let Some(set) = cf.next_for(&s) {
            s.observe(set, 1.0 + set as f64, 3.0).unwrap();
            seq.push(set);
        }
        assert_eq!(seq, vec![2, 0, 1, 3]);
    }

    #[test]
    fn cbf_similarity_example() {
        let features: BTreeMap<_, _> = [(q(0), vec![3.0]), (q(1), vec![1.0])].into();
        let sims = cbf_similarities(&[0.0], &features, DistanceMetric::Euclidean, 1e-9).unwrap();
        assert!((sims.values[&q(0)] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(sims.values[&q(1)], 1.0);
        assert_eq!(sims.nearest().unwrap().0, &q(1));
        let same = cbf_similarities(&[3.0], &features, DistanceMetric::Euclidean, 1e-9).unwrap();
        assert!((same.values[&q(0)] - 1e9).abs() < 1e-3);
        assert_eq!(
            cbf_similarities(&[0.0], &BTreeMap::new(), DistanceMetric::Euclidean, 1e-9),
            Err(RecommendError::NoFeatures)
        );
    }

    #[test]
    fn random_is_seeded_permutation() {
        let a = RandomSearch::new(128, 64, 7);
        let b = RandomSearch::new(128, 64, 7);
        assert_eq!(a.order(), b.order());
        assert_eq!(a.order()[0], 64);
        let mut sorted = a.order().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..128).collect::<Vec<_>>());
        assert_ne!(RandomSearch::new(128, 64, 8).order(), a.order());

        let mut s = TuningSession::new(TargetKey::new("p", "w"), 64, 128, 128, Objective::Minimize);
        let mut drawn = Vec::new();
        while let Some(set) = random_next(&s, 7) {
            s.observe(set, 1.0, 1.0).unwrap();
            drawn.push(set);
        }
        assert_eq!(drawn, a.order());
    }

    #[test]
    fn observe_rules() {
        let kb = three_program_kb();
        let mut s = TuningSession::for_kb(TargetKey::new("p", "w"), &kb, 4, Objective::Minimize);
        assert_eq!(
            s.observe(1, 2.0, 3.0),
            Err(RecommendError::BaselineFirst(0))
        );
        assert_eq!(s.observe(0, 3.0, 3.0), Ok(0.0));
        let r = s.observe(1, 2.85, 3.0).unwrap();
        assert!((r + 0.05).abs() < 1e-12);
        assert_eq!(
            s.observe(1, 2.0, 3.0),
            Err(RecommendError::AlreadyEvaluated(1))
        );
        assert!(matches!(
            s.observe(2, 0.0, 3.0),
            Err(RecommendError::Model(_))
        ));
        s.observe_failure(2).unwrap();
        assert_eq!(s.reactions().count(), 2);
        assert_eq!(s.len(), 3);
        s.observe(3, 9.0, 3.0).unwrap();
        assert!(s.is_exhausted());
        assert_eq!(s.best(), Some((1, 2.85)));
    }

    #[test]
    fn kind_names_parse() {
        for k in AlgorithmKind::ALL {
            assert_eq!(k.as_str().parse::<AlgorithmKind>(), Ok(k));
        }
        let cf = RecommenderConfig::tuned(AlgorithmKind::Collaborative, Suite::PolyBench);
        assert_eq!((cf.metric, cf.k), (DistanceMetric::Correlation, 20));
        let cbf = RecommenderConfig::tuned(AlgorithmKind::ContentBased, Suite::CBench);
        assert_eq!((cbf.metric, cbf.k), (DistanceMetric::Euclidean, 5));
    }
}
