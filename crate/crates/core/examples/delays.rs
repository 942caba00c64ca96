//! Gap and iteration delays of each algorithm against collaborative
//! filtering.
//!
//! Run with `cargo run --release --example delays`.

use flagrec::eval::{delays_against, run_loocv, Checkpoint, EvaluationReport, LoocvOptions};
use flagrec::recommend::{AlgorithmKind, RecommenderConfig, Suite};
use flagrec::synthetic::{generate, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = generate(&SuiteSpec {
        programs: 20,
        flags: 6,
        families: 6,
        program_noise: 0.2,
        seed: 8,
        ..SuiteSpec::default()
    })
    .knowledge_base()?;
    let options = LoocvOptions {
        budget: kb.catalogue_size(),
        repetitions: 200,
        jobs: 4,
    };
    let mut report = EvaluationReport::default();
    for kind in AlgorithmKind::ALL {
        report = report.merge(run_loocv(
            &kb,
            &RecommenderConfig::tuned(kind, Suite::CBench),
            options,
        )?);
    }
    let checkpoints = [
        Checkpoint::Gap(0.25),
        Checkpoint::Gap(0.1),
        Checkpoint::Gap(0.05),
        Checkpoint::Iteration(5),
        Checkpoint::Iteration(10),
    ];
    for row in delays_against(&report.harmonic_curves(), "cf", &checkpoints)? {
        if row.algorithm == "cf" {
            continue;
        }
        let delay = row.delay.map_or("undefined".to_string(), |d| d.to_string());
        println!(
            "{:>7} {:>8} {delay}",
            row.algorithm,
            row.checkpoint.to_string()
        );
    }
    Ok(())
}
