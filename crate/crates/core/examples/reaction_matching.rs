//! Collaborative filtering step by step: the session's reactions pick the
//! nearest knowledge-base program, whose best remaining set comes next.
//!
//! Run with `cargo run --example reaction_matching`.

use flagrec::metrics::DistanceMetric;
use flagrec::model::{build_knowledge_base, FlagTable, Measurement, Objective, TargetKey};
use flagrec::recommend::{
    build_recommender, rm_similarities, AlgorithmKind, RecommenderConfig, TuningSession,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let times = [
        [3.0, 4.0, 2.0],
        [1.0, 4.0, 1.0],
        [5.0, 3.0, 4.0],
        [4.0, 5.0, 3.0],
    ];
    let mut ms = Vec::new();
    for (set, row) in times.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            ms.push(Measurement::new(
                TargetKey::new(format!("q{p}"), "w"),
                set,
                *v,
            ));
        }
    }
    let kb = build_knowledge_base(&ms, FlagTable::anonymous(2)?, 0)?;
    let config = RecommenderConfig::new(AlgorithmKind::Collaborative)
        .with_k(1)
        .with_metric(DistanceMetric::Euclidean);
    let cf = build_recommender(&kb, &config, None)?;

    // the new program runs in 20s at the baseline and 19s under x1
    let measured = [20.0, 19.0, 14.0, 18.0];
    let mut session = TuningSession::for_kb(TargetKey::new("p", "w"), &kb, 4, Objective::Minimize);
    while let Some(set) = cf.next_for(&session) {
        let r = session.observe(set, measured[set], measured[0])?;
        println!("evaluated x{set}: relevance {r:+.3}");
        if let Ok(sims) = rm_similarities(&session, &kb, config.metric, config.epsilon) {
            if let Some((nearest, s)) = sims.nearest() {
                println!("  nearest program {nearest} (similarity {s:.3})");
            }
        }
    }
    println!("best: {:?}", session.best());
    Ok(())
}
