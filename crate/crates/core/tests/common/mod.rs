#![allow(dead_code)]

use flagrec::model::{build_knowledge_base, FlagTable, KnowledgeBase, Measurement, TargetKey};
use flagrec::synthetic::{generate, SuiteSpec};

/// Execution times of three programs (columns) under four sets (rows).
pub const THREE_PROGRAM_TIMES: [[f64; 3]; 4] = [
    [3.0, 4.0, 2.0],
    [1.0, 4.0, 1.0],
    [5.0, 3.0, 4.0],
    [4.0, 5.0, 3.0],
];

pub fn q(i: usize) -> TargetKey {
    TargetKey::new(format!("q{i}"), "w")
}

pub fn three_program_measurements() -> Vec<Measurement> {
    let mut ms = Vec::new();
    for (set, row) in THREE_PROGRAM_TIMES.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            ms.push(Measurement::new(q(p), set, *v));
        }
    }
    ms
}

pub fn three_program_kb() -> KnowledgeBase {
    build_knowledge_base(&three_program_measurements(), FlagTable::anonymous(2).unwrap(), 0).unwrap()
}

/// Small suite: 10 programs x 2 workloads over 16 sets.
pub fn small_suite(seed: u64) -> KnowledgeBase {
    generate(&SuiteSpec {
        seed,
        ..SuiteSpec::default()
    })
    .knowledge_base()
    .unwrap()
}

/// Seven-flag suite re-keyed onto the standard flag table (baseline -O3).
pub fn standard_suite(programs: usize, workloads: usize, seed: u64) -> KnowledgeBase {
    let suite = generate(&SuiteSpec {
        programs,
        workloads,
        flags: 7,
        families: 4,
        feature_dim: 8,
        seed,
        ..SuiteSpec::default()
    });
    let table = FlagTable::standard();
    let baseline = table.default_baseline();
    build_knowledge_base(&suite.measurements, table, baseline)
        .unwrap()
        .with_features(suite.features)
}
