use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judge::TrajectoryStats;
use super::value::whittle_index;
use super::RmabInstance;
use crate::error::Result;

/// Chooses which arms to act on given the current joint state.
pub trait ArmSelector: Sync {
    fn select(&self, t: usize, states: &[u8], budget: usize) -> Vec<bool>;
}

/// Activates the `budget` arms with the largest current-state index; ties go
/// to the lowest arm id.
pub fn top_k_step(indices: &[[f64; 2]], states: &[u8], budget: usize) -> Vec<bool> {
    assert_eq!(indices.len(), states.len(), "one state per arm");
    let current = |i: usize| indices[i][states[i] as usize];
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by(|&a, &b| current(b).total_cmp(&current(a)).then(a.cmp(&b)));
    let mut actions = vec![false; states.len()];
    for &i in order.iter().take(budget.min(states.len())) {
        actions[i] = true;
    }
    actions
}

/// Top-K policy over precomputed per-arm, per-state Whittle indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittlePolicy {
    pub indices: Vec<[f64; 2]>,
}

impl WhittlePolicy {
    pub fn new(instance: &RmabInstance, tolerance: f64) -> Result<Self> {
        instance.validate()?;
        let indices = instance
            .arms
            .par_iter()
            .map(|arm| {
                Ok([
                    whittle_index(arm, &instance.reward, 0, instance.gamma, tolerance)?,
                    whittle_index(arm, &instance.reward, 1, instance.gamma, tolerance)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { indices })
    }
}

impl ArmSelector for WhittlePolicy {
    fn select(&self, _t: usize, states: &[u8], budget: usize) -> Vec<bool> {
        top_k_step(&self.indices, states, budget)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    /// `states[t][i]` for `t = 0..=horizon`.
    pub states: Vec<Vec<u8>>,
    /// `actions[t][i]` for `t = 0..horizon`.
    pub actions: Vec<Vec<bool>>,
    /// `Σ_t γ^t Σ_i R_i(s_i^t)` under the instance reward.
    pub discounted_reward: f64,
    pub stats: TrajectoryStats,
}

pub fn simulate<R: Rng + ?Sized>(
    instance: &RmabInstance,
    selector: &dyn ArmSelector,
    rng: &mut R,
) -> Result<Simulation> {
    instance.validate()?;
    let rewards: Vec<[f64; 2]> = instance.arms.iter().map(|a| a.rewards(&instance.reward)).collect();
    let mut current = instance.start_states();
    let mut states = vec![current.clone()];
    let mut actions = Vec::with_capacity(instance.horizon);
    let mut discounted_reward = 0.0;
    let mut discount = 1.0;
    for t in 0..instance.horizon {
        let act = selector.select(t, &current, instance.budget);
        debug_assert_eq!(act.iter().filter(|&&a| a).count(), instance.budget.min(current.len()));
        discounted_reward += discount * current.iter().zip(&rewards).map(|(&s, r)| r[s as usize]).sum::<f64>();
        discount *= instance.gamma;
        let next: Vec<u8> = instance
            .arms
            .iter()
            .zip(current.iter().zip(&act))
            .map(|(arm, (&s, &a))| (rng.random::<f64>() < arm.engage_prob(s as usize, a as usize)) as u8)
            .collect();
        actions.push(act);
        states.push(next.clone());
        current = next;
    }
    let stats = TrajectoryStats::from_states(instance, &states[..instance.horizon]);
    Ok(Simulation {
        states,
        actions,
        discounted_reward,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmab::{gen_instance, parse_reward, Arm, FeatureSet, InstanceSpec, RewardExpr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_k_examples() {
        let idx = |v: &[f64]| v.iter().map(|&x| [x, x]).collect::<Vec<_>>();
        let s = [0, 1, 0];
        assert_eq!(top_k_step(&idx(&[5.0, 2.0, 2.0]), &s, 3), vec![true; 3]);
        assert_eq!(top_k_step(&idx(&[5.0, 2.0, 2.0]), &s, 1), vec![true, false, false]);
        assert_eq!(top_k_step(&idx(&[2.0, 2.0, 1.0]), &s, 1), vec![true, false, false]);
        assert_eq!(top_k_step(&idx(&[1.0, 2.0, 2.0]), &s, 1), vec![false, true, false]);
        // the current state selects the index
        assert_eq!(top_k_step(&[[0.0, 9.0], [1.0, 0.0]], &[0, 0], 1), vec![false, true]);
    }

    fn instance(horizon: usize) -> RmabInstance {
        gen_instance(&InstanceSpec {
            arms: 8,
            budget: 3,
            gamma: 0.9,
            horizon,
            reward: parse_reward("s + 2 * (youngest_age or lowest_income)").unwrap(),
            seed: 17,
        })
        .unwrap()
    }

    #[test]
    fn horizon_zero_has_zero_stats() {
        let inst = instance(0);
        let policy = WhittlePolicy::new(&inst, 1e-6).unwrap();
        let sim = simulate(&inst, &policy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sim.stats.total, 0.0);
        assert!(sim.stats.by_feature.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn absorbing_engagement_counts_every_step() {
        let arm = Arm::from_engagement([[0.2, 0.5], [1.0, 1.0]], FeatureSet::from_names(["oldest_age"]).unwrap()).unwrap();
        let inst = RmabInstance {
            arms: vec![arm; 4],
            budget: 2,
            gamma: 0.9,
            horizon: 7,
            reward: RewardExpr::State,
            initial_states: vec![1; 4],
        };
        let policy = WhittlePolicy::new(&inst, 1e-6).unwrap();
        let sim = simulate(&inst, &policy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sim.stats.total, 28.0);
        assert_eq!(sim.stats.feature("oldest_age"), Some(28.0));
    }

    #[test]
    fn seeded_runs_repeat_and_respect_budget() {
        let inst = instance(25);
        let policy = WhittlePolicy::new(&inst, 1e-6).unwrap();
        let a = simulate(&inst, &policy, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = simulate(&inst, &policy, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for act in &a.actions {
            assert_eq!(act.iter().filter(|&&x| x).count(), 3);
        }
        assert_eq!(a.stats, TrajectoryStats::from_states(&inst, &a.states[..25]));
    }
}
