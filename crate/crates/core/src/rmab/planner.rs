//! Exact finite-horizon planning on tiny instances, used as an oracle.

use super::simulate::ArmSelector;
use super::RmabInstance;
use crate::error::{Error, Result};

pub const MAX_PLAN_ARMS: usize = 4;
pub const MAX_PLAN_HORIZON: usize = 6;

fn check_size(instance: &RmabInstance) -> Result<()> {
    instance.validate()?;
    let n = instance.arms.len();
    if n > MAX_PLAN_ARMS || instance.horizon > MAX_PLAN_HORIZON {
        return Err(Error::SizeLimit(format!(
            "{n} arms, horizon {} (limits {MAX_PLAN_ARMS} arms, horizon {MAX_PLAN_HORIZON})",
            instance.horizon
        )));
    }
    Ok(())
}

struct Joint {
    n: usize,
    rewards: Vec<[f64; 2]>,
}

impl Joint {
    fn new(instance: &RmabInstance) -> Self {
        Self {
            n: instance.arms.len(),
            rewards: instance.arms.iter().map(|a| a.rewards(&instance.reward)).collect(),
        }
    }

    fn bit(state: usize, i: usize) -> usize {
        state >> i & 1
    }

    fn reward(&self, state: usize) -> f64 {
        (0..self.n).map(|i| self.rewards[i][Self::bit(state, i)]).sum()
    }

    /// `P(next | state, action)` with both encoded as bitmasks.
    fn transition(&self, instance: &RmabInstance, state: usize, action: usize, next: usize) -> f64 {
        (0..self.n)
            .map(|i| {
                let p1 = instance.arms[i].engage_prob(Self::bit(state, i), Self::bit(action, i));
                if Self::bit(next, i) == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            })
            .product()
    }

    fn encode(states: &[u8]) -> usize {
        states.iter().enumerate().map(|(i, &s)| (s as usize) << i).sum()
    }

    fn decode(&self, state: usize) -> Vec<u8> {
        (0..self.n).map(|i| Self::bit(state, i) as u8).collect()
    }
}

/// Optimal expected `Σ_{t < horizon} γ^t Σ_i R_i(s_i^t)` over all action
/// sequences acting on at most `budget` arms per step.
pub fn brute_force_plan(instance: &RmabInstance) -> Result<f64> {
    check_size(instance)?;
    let joint = Joint::new(instance);
    let states = 1usize << joint.n;
    let actions: Vec<usize> = (0..states)
        .filter(|a| a.count_ones() as usize <= instance.budget)
        .collect();
    let mut value = vec![0.0; states];
    for _ in 0..instance.horizon {
        let next_value = value;
        value = (0..states)
            .map(|s| {
                let best = actions
                    .iter()
                    .map(|&a| {
                        (0..states)
                            .map(|n| joint.transition(instance, s, a, n) * next_value[n])
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                joint.reward(s) + instance.gamma * best
            })
            .collect();
    }
    Ok(value[Joint::encode(&instance.start_states())])
}

/// Exact expected discounted reward of `selector` on the joint chain.
pub fn evaluate_policy_exact(instance: &RmabInstance, selector: &dyn ArmSelector) -> Result<f64> {
    check_size(instance)?;
    let joint = Joint::new(instance);
    let states = 1usize << joint.n;
    let mut dist = vec![0.0; states];
    dist[Joint::encode(&instance.start_states())] = 1.0;
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..instance.horizon {
        let mut next = vec![0.0; states];
        for s in 0..states {
            if dist[s] == 0.0 {
                continue;
            }
            total += discount * dist[s] * joint.reward(s);
            let act = selector.select(t, &joint.decode(s), instance.budget);
            let a = act.iter().enumerate().map(|(i, &x)| (x as usize) << i).sum();
            for (n, slot) in next.iter_mut().enumerate() {
                *slot += dist[s] * joint.transition(instance, s, a, n);
            }
        }
        dist = next;
        discount *= instance.gamma;
    }
    Ok(total)
}
