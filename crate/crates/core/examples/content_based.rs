//! Content-based filtering: PCA over static program features, then a
//! ranking borrowed from the programs closest in feature space.
//!
//! Run with `cargo run --example content_based`.

use flagrec::features::{fit_pca, ComponentSelection};
use flagrec::model::Objective;
use flagrec::recommend::{AlgorithmKind, RecommenderConfig, StaticRanking, Suite};
use flagrec::synthetic::{generate, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = generate(&SuiteSpec {
        programs: 12,
        ..SuiteSpec::default()
    });
    let kb = suite.knowledge_base()?;

    let rows: Vec<Vec<f64>> = suite.features.values().cloned().collect();
    let pca = fit_pca(&rows, ComponentSelection::default())?;
    println!(
        "{} features reduced to {} components, explained variance ratio {:?}",
        pca.input_dim(),
        pca.n_components(),
        pca.explained_variance_ratio()
    );

    // tune prog03 against the other programs
    let target = kb
        .targets()
        .find(|t| t.program == "prog03")
        .unwrap()
        .clone();
    let fold = kb.without_program(&target.program);
    let config = RecommenderConfig::tuned(AlgorithmKind::ContentBased, Suite::CBench)
        .with_objective(Objective::Minimize);
    let ranking =
        StaticRanking::content_based(&fold, kb.target_features(&target).unwrap(), &config)?;
    println!("cbf order for {target}: {:?}", ranking.ranking());
    let (best, _) = kb.row(&target).unwrap().best(Objective::Minimize).unwrap();
    let pos = ranking.ranking().iter().position(|&s| s == best).unwrap();
    println!("true best set {best} is suggested at iteration {}", pos + 1);
    Ok(())
}
