//! Top Popular ranking of a three-program knowledge base.
//!
//! Run with `cargo run --example top_popular`.

use std::collections::HashSet;

use flagrec::model::{build_knowledge_base, FlagTable, Measurement, Objective, TargetKey};
use flagrec::recommend::{rank_sets, top_popular_scores};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // execution times: one row per set, one column per program
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

    let tp = top_popular_scores(&kb)?;
    for (set, score) in tp.scores.iter().enumerate() {
        println!("x{set}: mean relevance {score:+.3}");
    }
    let ranking = rank_sets(&tp, Objective::Minimize, &HashSet::new(), None);
    println!("ranking: {ranking:?}");
    Ok(())
}
