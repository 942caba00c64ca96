use std::time::Duration;

use flagrec::driver::{
    compile, live_tune, measure, BuildRecipe, CommandEvaluator, DriverError, EntryStatus,
};
use flagrec::model::{FlagTable, KnowledgeBase, TargetKey};
use flagrec::recommend::{AlgorithmKind, RecommenderConfig};

fn recipe(dir: &std::path::Path, compile: &str, run: &str) -> BuildRecipe {
    let mut r = BuildRecipe::new(compile, run, dir);
    r.repetitions = 3;
    r.compile_timeout = Duration::from_secs(10);
    r.run_timeout = Duration::from_secs(10);
    r
}

const TOUCH: &str = "printf '#!/bin/sh\\nexit 0\\n' > {output} && chmod +x {output} # {flags}";

#[test]
fn compile_and_measure_real_commands() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(dir.path(), TOUCH, "{binary}");
    let table = FlagTable::anonymous(2).unwrap();
    let binary = compile(&r, &table, 3).unwrap();
    assert!(binary.path.exists());
    assert_eq!(binary.record.exit_code, Some(0));
    let t = measure(&r, &binary).unwrap();
    assert_eq!(t.raw.len(), 3);
    assert!(t.value >= 0.0);
}

#[test]
fn compile_failure_keeps_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(
        dir.path(),
        "echo 'bad flag {flags}' >&2; exit 3 # {output}",
        "{binary}",
    );
    match compile(&r, &FlagTable::anonymous(1).unwrap(), 1) {
        Err(DriverError::CompileFailed { diagnostics, .. }) => {
            assert!(diagnostics.contains("bad flag -f0"))
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn run_failure_and_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let table = FlagTable::anonymous(1).unwrap();
    let failing = recipe(dir.path(), TOUCH, "exit 1 # {binary}");
    let b = compile(&failing, &table, 0).unwrap();
    assert!(matches!(
        measure(&failing, &b),
        Err(DriverError::RunFailed { .. })
    ));

    let mut slow = recipe(dir.path(), TOUCH, "sleep 5 # {binary}");
    slow.run_timeout = Duration::from_millis(200);
    let start = std::time::Instant::now();
    assert!(matches!(
        measure(&slow, &b),
        Err(DriverError::Timeout { .. })
    ));
    assert!(start.elapsed() < Duration::from_secs(4));
}

#[test]
fn live_session_logs_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    // set 2 (flag -f1 alone) fails to build
    let r = recipe(
        dir.path(),
        "case '{flags}' in '-f1') exit 1 ;; esac; printf '#!/bin/sh\\nexit 0\\n' > {output} && chmod +x {output}",
        "{binary}",
    );
    let table = FlagTable::anonymous(2).unwrap();
    let kb = KnowledgeBase::empty(table.clone(), 0).unwrap();
    let mut ev = CommandEvaluator::new(r, table).unwrap();
    let config = RecommenderConfig::new(AlgorithmKind::Collaborative);
    let out = live_tune(&mut ev, &kb, &config, TargetKey::new("p", "0"), None, 4).unwrap();
    assert_eq!(out.session.sequence(), vec![0, 1, 2, 3]);
    let statuses: Vec<EntryStatus> = out.log.entries.iter().map(|e| e.status).collect();
    assert_eq!(
        statuses,
        [
            EntryStatus::Ok,
            EntryStatus::Ok,
            EntryStatus::Failed,
            EntryStatus::Ok
        ]
    );
    assert!(out.log.to_csv().lines().nth(3).unwrap().contains("failed"));
}

#[test]
fn failing_baseline_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let r = recipe(dir.path(), "exit 1 # {flags} {output}", "{binary}");
    let table = FlagTable::anonymous(2).unwrap();
    let kb = KnowledgeBase::empty(table.clone(), 0).unwrap();
    let mut ev = CommandEvaluator::new(r, table).unwrap();
    let err = live_tune(
        &mut ev,
        &kb,
        &RecommenderConfig::new(AlgorithmKind::TopPopular),
        TargetKey::new("p", "0"),
        None,
        4,
    )
    .unwrap_err();
    assert!(matches!(err, DriverError::BaselineFailed { set: 0, .. }));
}
