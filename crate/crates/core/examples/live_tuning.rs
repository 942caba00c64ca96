//! Live tuning against real processes. The "compiler" writes a shell script
//! whose runtime depends on the flags it was given.
//!
//! Run with `cargo run --example live_tuning`.

use std::time::Duration;

use flagrec::driver::{live_tune, BuildRecipe, CommandEvaluator};
use flagrec::model::{FlagTable, KnowledgeBase, TargetKey};
use flagrec::recommend::{AlgorithmKind, RecommenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("flagrec-live-example");
    std::fs::create_dir_all(&dir)?;
    let cc = dir.join("cc.sh");
    std::fs::write(
        &cc,
        "#!/bin/sh\nout=$1; shift\nd=0.03\ncase \" $* \" in *\" -funroll \"*) d=0.01 ;; esac\n\
         printf '#!/bin/sh\\nsleep %s\\n' $d > $out && chmod +x $out\n",
    )?;

    let flags = FlagTable::new(["-funroll", "-finline", "-fvectorize"])?;
    let mut recipe = BuildRecipe::new(
        format!("sh {} {{output}} {{flags}}", cc.display()),
        "{binary}",
        &dir,
    );
    recipe.repetitions = 3;
    recipe.run_timeout = Duration::from_secs(5);

    // no knowledge base: suggestions follow set-index order
    let kb = KnowledgeBase::empty(flags.clone(), 0)?;
    let mut evaluator = CommandEvaluator::new(recipe, flags.clone())?;
    let config = RecommenderConfig::new(AlgorithmKind::Collaborative);
    let outcome = live_tune(
        &mut evaluator,
        &kb,
        &config,
        TargetKey::new("demo", "0"),
        None,
        8,
    )?;

    print!("{}", outcome.log.to_csv());
    let (best, value) = outcome.best;
    println!("best set {best} [{}] at {value:.4}s", flags.render(best)?);
    Ok(())
}
