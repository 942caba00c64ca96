//! Compiler flag-set recommendation.
//!
//! A [`KnowledgeBase`] holds the measured performance of previously tuned
//! programs over a catalogue of flag sets. Recommenders propose the next
//! set to evaluate for a new target:
//!
//! * [`RandomSearch`]: baseline first, then a seeded permutation;
//! * Top Popular: sets ranked by mean relevance over the knowledge base;
//! * content-based filtering: neighbours chosen by static program features;
//! * collaborative filtering ([`Collaborative`]): neighbours chosen by how
//!   similarly they react to the sets already evaluated on the target.
//!
//! [`eval`] replays recorded datasets under leave-one-program-out
//! cross-validation and computes gap curves and delays, [`driver`] runs live
//! tuning sessions against real compile and run commands, and [`ingest`]
//! reads and writes the CSV formats.

pub mod cli;
pub mod driver;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod recommend;
pub mod stats;
pub mod synthetic;

pub use eval::{
    gap_curve, gap_delay, harmonic_gap, iteration_delay, npi, quartiles, run_loocv, Delay,
    EvalError, EvaluationReport, LoocvOptions,
};
pub use features::{fit_pca, ComponentSelection, FeatureError, PcaModel};
pub use metrics::{distance, similarity_from_distance, DistanceMetric, MetricError};
pub use model::{
    build_knowledge_base, relevance, render_flagset, FlagSet, FlagTable, KnowledgeBase,
    Measurement, ModelError, Objective, TargetKey,
};
pub use recommend::{
    build_recommender, knn_predict, rank_sets, top_popular_scores, AlgorithmKind, Collaborative,
    RandomSearch, Recommender, RecommenderConfig, StaticRanking, Suite, TuningSession,
};
