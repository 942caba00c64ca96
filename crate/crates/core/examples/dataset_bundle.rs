//! Writing a dataset to disk and reading it back.
//!
//! Run with `cargo run --example dataset_bundle -- <dir>`.

use flagrec::ingest::{DatasetBundle, Manifest};
use flagrec::model::Objective;
use flagrec::synthetic::{generate, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("flagrec-bundle-example"));
    let suite = generate(&SuiteSpec::default());
    let bundle = DatasetBundle {
        kb: suite.knowledge_base()?,
        manifest: Manifest {
            baseline: suite.baseline,
            objective: Objective::Minimize,
            suite: "synthetic".into(),
        },
    };
    for path in bundle.save(&dir)? {
        println!("wrote {}", path.display());
    }
    let loaded = DatasetBundle::load(&dir)?;
    assert_eq!(loaded, bundle);
    println!(
        "reloaded {} targets over {} sets; try `flagrec kb inspect --kb {}`",
        loaded.kb.len(),
        loaded.kb.catalogue_size(),
        dir.display()
    );
    Ok(())
}
