//! Preference data over reward functions: commands, candidate rewards,
//! simulated trajectories and judged pairs.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dsl::{BinaryOp, RewardExpr};
use super::features::{Category, FeatureId};
use super::judge::{synthetic_judge, PrioritySpec, TrajectoryStats};
use super::simulate::{simulate, WhittlePolicy};
use super::value::DEFAULT_WHITTLE_TOLERANCE;
use super::RmabInstance;
use crate::error::{Error, Result};
use crate::preference_data::{aggregate_votes, sample_label, PreferenceExample};

const COMMAND_CATEGORIES: [Category; 5] = [
    Category::Age,
    Category::Income,
    Category::Education,
    Category::CallSlot,
    Category::Channel,
];

/// Random prioritization commands over one or two feature categories.
pub fn generate_commands(count: usize, seed: u64) -> Vec<PrioritySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n_cat = rng.random_range(1..=2);
            let cats: Vec<Category> = COMMAND_CATEGORIES.choose_multiple(&mut rng, n_cat).copied().collect();
            let mut weights = BTreeMap::new();
            let mut parts = Vec::new();
            for c in cats {
                let pool: Vec<FeatureId> = FeatureId::in_category(c).collect();
                let k = rng.random_range(1..=2);
                for f in pool.choose_multiple(&mut rng, k) {
                    weights.insert(f.name().to_string(), 1.0);
                    parts.push(f.def().description);
                }
            }
            PrioritySpec {
                description: format!("Prioritize beneficiaries: {}", parts.join(" and ")),
                weights,
            }
        })
        .collect()
}

fn or_group(features: &[FeatureId]) -> RewardExpr {
    let mut it = features.iter().map(|&f| RewardExpr::Feature(f));
    let first = it.next().expect("non-empty group");
    it.fold(first, |lhs, rhs| RewardExpr::Binary {
        op: BinaryOp::Or,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    })
}

fn binary(op: BinaryOp, lhs: RewardExpr, rhs: RewardExpr) -> RewardExpr {
    RewardExpr::Binary {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    }
}

/// Candidate rewards of the form `s * (1 + c1 * (f or ...) + ...)`.
///
/// A feature term added outside the `s` factor shifts both states' reward
/// by the same amount and leaves every Whittle index unchanged, so the
/// candidates scale engagement instead.
pub fn generate_candidates(command: &PrioritySpec, count: usize, seed: u64) -> Vec<RewardExpr> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relevant: Vec<FeatureId> = command.weights.keys().filter_map(|n| FeatureId::by_name(n)).collect();
    let all: Vec<FeatureId> = FeatureId::all().collect();
    (0..count)
        .map(|_| {
            let mut inner = RewardExpr::Literal(1.0);
            for _ in 0..rng.random_range(1..=2) {
                let k = rng.random_range(1..=3);
                let mut group: Vec<FeatureId> = (0..k)
                    .map(|_| {
                        if !relevant.is_empty() && rng.random_bool(0.5) {
                            *relevant.choose(&mut rng).expect("non-empty")
                        } else {
                            *all.choose(&mut rng).expect("non-empty")
                        }
                    })
                    .collect();
                group.sort();
                group.dedup();
                let coeff = RewardExpr::Literal(rng.random_range(1..=4) as f64);
                inner = binary(BinaryOp::Add, inner, binary(BinaryOp::Mul, coeff, or_group(&group)));
            }
            binary(BinaryOp::Mul, RewardExpr::State, inner)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefBuildConfig {
    pub pairs_per_command: usize,
    /// Judge queries per pair; 0 keeps the judge probability itself.
    pub votes: usize,
    pub temperature: f64,
    #[serde(default = "default_tolerance")]
    pub whittle_tolerance: f64,
    pub seed: u64,
}

fn default_tolerance() -> f64 {
    DEFAULT_WHITTLE_TOLERANCE
}

impl Default for PrefBuildConfig {
    fn default() -> Self {
        Self {
            pairs_per_command: 50,
            votes: 10,
            temperature: 5.0,
            whittle_tolerance: DEFAULT_WHITTLE_TOLERANCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceBuild {
    pub examples: Vec<PreferenceExample>,
    /// `stats[command][candidate]`.
    pub stats: Vec<Vec<TrajectoryStats>>,
}

/// Example count of a build, checked without simulating anything.
pub fn count_preference_examples(commands: usize, candidates_per_command: usize, pairs_per_command: usize) -> Result<usize> {
    if candidates_per_command < 2 {
        return Err(Error::invalid("at least two candidates per command are needed"));
    }
    commands
        .checked_mul(pairs_per_command)
        .ok_or_else(|| Error::invalid("example count overflows"))
}

/// Prompt ids are command indices, response ids candidate indices.
pub fn build_preference_dataset(
    commands: &[PrioritySpec],
    candidates: &[Vec<RewardExpr>],
    instance: &RmabInstance,
    config: &PrefBuildConfig,
) -> Result<PreferenceBuild> {
    if commands.len() != candidates.len() {
        return Err(Error::invalid(format!(
            "{} commands but {} candidate lists",
            commands.len(),
            candidates.len()
        )));
    }
    instance.validate()?;
    for (c, list) in candidates.iter().enumerate() {
        count_preference_examples(1, list.len(), 0).map_err(|e| Error::invalid(format!("command {c}: {e}")))?;
        commands[c].validate()?;
    }

    let results: Vec<(Vec<PreferenceExample>, Vec<TrajectoryStats>)> = commands
        .par_iter()
        .zip(candidates)
        .enumerate()
        .map(|(c, (command, list))| {
            // every candidate of a command sees the same random stream
            let stats = list
                .iter()
                .map(|expr| {
                    let inst = instance.with_reward(expr.clone());
                    let policy = WhittlePolicy::new(&inst, config.whittle_tolerance)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(2 * c as u64);
                    Ok(simulate(&inst, &policy, &mut rng)?.stats)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(2 * c as u64 + 1);
            let mut examples = Vec::with_capacity(config.pairs_per_command);
            for _ in 0..config.pairs_per_command {
                let a = rng.random_range(0..list.len());
                let b = (a + rng.random_range(1..list.len())) % list.len();
                let judged = synthetic_judge(&stats[a], &stats[b], command, config.temperature)?;
                let q = if config.votes == 0 {
                    judged.q()
                } else {
                    let votes: Vec<_> = (0..config.votes).map(|_| sample_label(judged.q(), &mut rng)).collect();
                    aggregate_votes(&votes)?.q()
                };
                examples.push(PreferenceExample::soft(c, a, b, q)?);
            }
            Ok((examples, stats))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut build = PreferenceBuild {
        examples: Vec::new(),
        stats: Vec::with_capacity(results.len()),
    };
    for (examples, stats) in results {
        build.examples.extend(examples);
        build.stats.push(stats);
    }
    Ok(build)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmab::{gen_instance, parse_reward, InstanceSpec};

    fn instance() -> RmabInstance {
        gen_instance(&InstanceSpec {
            arms: 15,
            budget: 3,
            gamma: 0.9,
            horizon: 12,
            reward: parse_reward("s").unwrap(),
            seed: 8,
        })
        .unwrap()
    }

    #[test]
    fn counting() {
        assert_eq!(count_preference_examples(190, 6, 50).unwrap(), 9500);
        assert!(count_preference_examples(3, 1, 5).is_err());
        let commands = generate_commands(1, 0);
        let candidates = vec![generate_candidates(&commands[0], 2, 1)];
        let cfg = PrefBuildConfig { pairs_per_command: 1, ..Default::default() };
        let build = build_preference_dataset(&commands, &candidates, &instance(), &cfg).unwrap();
        assert_eq!(build.examples.len(), 1);
    }

    #[test]
    fn identical_candidates_tie() {
        let commands = generate_commands(2, 5);
        let expr = parse_reward("s * (1 + 2 * oldest_age)").unwrap();
        let candidates = vec![vec![expr.clone(), expr.clone()], vec![expr.clone(), expr]];
        let cfg = PrefBuildConfig { pairs_per_command: 4, votes: 0, ..Default::default() };
        let build = build_preference_dataset(&commands, &candidates, &instance(), &cfg).unwrap();
        assert!(build.examples.iter().all(|e| e.label.target() == 0.5));
    }

    #[test]
    fn candidates_parse_back() {
        for command in generate_commands(10, 2) {
            for expr in generate_candidates(&command, 6, 3) {
                assert_eq!(parse_reward(&expr.to_string()).unwrap(), expr);
                assert!(expr.eval(1, Default::default()) > expr.eval(0, Default::default()));
            }
        }
    }

    #[test]
    fn builds_are_deterministic() {
        let commands = generate_commands(3, 1);
        let candidates: Vec<_> = commands.iter().enumerate().map(|(i, c)| generate_candidates(c, 4, i as u64)).collect();
        let cfg = PrefBuildConfig { pairs_per_command: 6, seed: 9, ..Default::default() };
        let a = build_preference_dataset(&commands, &candidates, &instance(), &cfg).unwrap();
        let b = build_preference_dataset(&commands, &candidates, &instance(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.examples.len(), 18);
    }
}
