//! Seeded synthetic benchmark suites for replay experiments.
//!
//! Programs belong to families. Each family has its own additive effect per
//! flag plus pairwise interactions; programs perturb their family's effects
//! and workloads scale the base runtime. Feature vectors are noisy copies of
//! a family centroid, so content-based filtering has a signal to find.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    build_knowledge_base, FlagTable, KnowledgeBase, Measurement, ModelError, TargetKey,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub programs: usize,
    pub workloads: usize,
    pub flags: usize,
    pub families: usize,
    pub feature_dim: usize,
    /// Spread of a program's effects around its family's.
    pub program_noise: f64,
    /// Spread of individual measurements.
    pub measurement_noise: f64,
    /// When set, every program gets an exact clone (a second program whose
    /// values are a positive multiple of the original's).
    pub clones: bool,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            programs: 10,
            workloads: 2,
            flags: 4,
            families: 3,
            feature_dim: 6,
            program_noise: 0.05,
            measurement_noise: 0.02,
            clones: false,
            seed: 0,
        }
    }
}

/// A generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub flags: FlagTable,
    pub baseline: usize,
    pub measurements: Vec<Measurement>,
    pub features: BTreeMap<TargetKey, Vec<f64>>,
}

impl SyntheticSuite {
    pub fn knowledge_base(&self) -> Result<KnowledgeBase, ModelError> {
        Ok(
            build_knowledge_base(&self.measurements, self.flags.clone(), self.baseline)?
                .with_features(self.features.clone()),
        )
    }
}

struct Profile {
    effects: Vec<f64>,
    interactions: Vec<Vec<f64>>,
    centroid: Vec<f64>,
}

fn log_factor(profile: &Profile, set: usize, flags: usize) -> f64 {
    let on = |i: usize| (set >> i) & 1 == 1;
    let mut s = 0.0;
    for i in 0..flags {
        if on(i) {
            s += profile.effects[i];
            for j in (i + 1)..flags {
                if on(j) {
                    s += profile.interactions[i][j];
                }
            }
        }
    }
    s
}

/// Generates a suite. The flag table is anonymous (`-f0`..); the baseline
/// is the empty set.
pub fn generate(spec: &SuiteSpec) -> SyntheticSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let flags = FlagTable::anonymous(spec.flags).expect("flag count in range");
    let catalogue = flags.catalogue_size();
    let families: Vec<Profile> = (0..spec.families.max(1))
        .map(|_| Profile {
            effects: (0..spec.flags)
                .map(|_| rng.random_range(-0.3..0.3))
                .collect(),
            interactions: (0..spec.flags)
                .map(|_| {
                    (0..spec.flags)
                        .map(|_| rng.random_range(-0.15..0.15))
                        .collect()
                })
                .collect(),
            centroid: (0..spec.feature_dim)
                .map(|_| rng.random_range(-5.0..5.0))
                .collect(),
        })
        .collect();

    let mut measurements = Vec::new();
    let mut features = BTreeMap::new();
    let mut push_program = |name: String,
                            profile: &Profile,
                            base: f64,
                            scale: f64,
                            rng: &mut ChaCha8Rng,
                            noise: &[Vec<f64>]| {
        for w in 0..spec.workloads {
            let key = TargetKey::new(name.clone(), w.to_string());
            let work = base * (1.0 + w as f64);
            for set in 0..catalogue {
                let v = work * scale * (log_factor(profile, set, spec.flags) + noise[w][set]).exp();
                measurements.push(Measurement::new(key.clone(), set, v));
            }
            let f: Vec<f64> = profile
                .centroid
                .iter()
                .map(|c| c + rng.random_range(-0.5..0.5))
                .collect();
            features.insert(key, f);
        }
    };

    for p in 0..spec.programs {
        let family = &families[p % families.len()];
        let n = spec.program_noise;
        let profile = Profile {
            effects: family
                .effects
                .iter()
                .map(|e| e + rng.random_range(-n..=n))
                .collect(),
            interactions: family
                .interactions
                .iter()
                .map(|row| row.iter().map(|e| e + rng.random_range(-n..=n)).collect())
                .collect(),
            centroid: family.centroid.clone(),
        };
        let base = rng.random_range(0.5..5.0);
        let m = spec.measurement_noise;
        let noise: Vec<Vec<f64>> = (0..spec.workloads)
            .map(|_| (0..catalogue).map(|_| rng.random_range(-m..=m)).collect())
            .collect();
        push_program(format!("prog{p:02}"), &profile, base, 1.0, &mut rng, &noise);
        if spec.clones {
            let scale = rng.random_range(0.5..2.0);
            push_program(
                format!("prog{p:02}-clone"),
                &profile,
                base,
                scale,
                &mut rng,
                &noise,
            );
        }
    }

    SyntheticSuite {
        flags,
        baseline: 0,
        measurements,
        features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_complete() {
        let spec = SuiteSpec::default();
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        let kb = a.knowledge_base().unwrap();
        assert_eq!(kb.len(), spec.programs * spec.workloads);
        assert!(kb.rows().all(|(_, r)| r.is_complete()));
        assert!(a.measurements.iter().all(|m| m.value > 0.0));
    }

    #[test]
    fn clones_share_relevances() {
        let suite = generate(&SuiteSpec {
            programs: 3,
            clones: true,
            ..SuiteSpec::default()
        });
        let kb = suite.knowledge_base().unwrap();
        let a = kb.row(&TargetKey::new("prog01", "0")).unwrap();
        let b = kb.row(&TargetKey::new("prog01-clone", "0")).unwrap();
        for (x, y) in a.relevances().iter().zip(b.relevances()) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
    }
}
