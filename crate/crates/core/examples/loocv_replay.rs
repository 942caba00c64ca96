//! Leave-one-program-out replay of all four algorithms on a synthetic suite.
//!
//! Run with `cargo run --release --example loocv_replay`.

use flagrec::eval::{run_loocv, EvaluationReport, LoocvOptions};
use flagrec::recommend::{AlgorithmKind, RecommenderConfig, Suite};
use flagrec::synthetic::{generate, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = generate(&SuiteSpec {
        programs: 16,
        flags: 6,
        families: 6,
        program_noise: 0.2,
        seed: 3,
        ..SuiteSpec::default()
    })
    .knowledge_base()?;
    let options = LoocvOptions {
        budget: kb.catalogue_size(),
        repetitions: 100,
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
    // harmonic mean, median and upper quartile of the per-target gaps
    println!(
        "{:>8} {:>10} {:>24} {:>24}",
        "algo", "iteration", "harmonic", "median / q3"
    );
    for (name, alg) in &report.algorithms {
        for i in [3, 5, 10, 20] {
            let q = &alg.quartiles[i - 1];
            println!(
                "{name:>8} {i:>10} {:>24.4} {:>15.4} / {:.4}",
                alg.harmonic[i - 1],
                q.median,
                q.q3
            );
        }
    }
    Ok(())
}
