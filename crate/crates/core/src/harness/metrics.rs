use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sample_from_log_probs, Policy};
use crate::preference_data::GroundTruthTask;

/// Fraction of pairs where the generated reward strictly beats the chosen
/// one; ties lose.
pub fn win_rate(generated: &[f64], chosen: &[f64]) -> Result<f64> {
    if generated.len() != chosen.len() {
        return Err(Error::invalid(format!(
            "{} generated rewards vs {} chosen rewards",
            generated.len(),
            chosen.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::invalid("win rate needs at least one pair"));
    }
    let wins = generated.iter().zip(chosen).filter(|(g, c)| g > c).count();
    Ok(wins as f64 / generated.len() as f64)
}

pub fn eval_reward(generated: &[f64]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::invalid("eval reward needs at least one response"));
    }
    Ok(generated.iter().sum::<f64>() / generated.len() as f64)
}

fn masked_log_probs(policy: &dyn Policy, task: &GroundTruthTask, prompt: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    Ok((policy.log_probs(prompt)?, task.support_mask(prompt)))
}

/// `Σ_x μ(x) Σ_y π(y|x) R(x, y)` with π renormalized over each prompt's
/// support.
pub fn expected_reward(policy: &dyn Policy, task: &GroundTruthTask, rewards: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &w) in task.prompt_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (lp, mask) = masked_log_probs(policy, task, x)?;
        let kept: Vec<f64> = lp.iter().zip(&mask).map(|(&l, &m)| if m { l } else { f64::NEG_INFINITY }).collect();
        let norm = crate::numerics::log_sum_exp(&kept);
        let inner: f64 = kept
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .map(|(y, l)| (l - norm).exp() * rewards[x][y])
            .sum();
        total += w * inner;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub n_eval: usize,
    pub win_rate: f64,
    pub eval_reward: f64,
    /// Win rate measured with the second reward table.
    pub judge_win_rate: f64,
    /// Exact counterpart of `eval_reward`.
    pub expected_reward: f64,
}

/// Samples `n_eval` prompts and reference pairs, takes the pair's
/// higher-reward member as the chosen response and compares a policy sample
/// against it under the task reward and under `judge`.
pub fn evaluate_policy(
    policy: &dyn Policy,
    reference: &dyn Policy,
    task: &GroundTruthTask,
    judge: &[Vec<f64>],
    n_eval: usize,
    seed: u64,
) -> Result<PolicyEvaluation> {
    if n_eval == 0 {
        return Err(Error::invalid("n_eval must be at least 1"));
    }
    task.validate()?;
    if judge.len() != task.prompts() || judge.iter().any(|r| r.len() != task.responses()) {
        return Err(Error::InvalidTask("judge table shape differs from the task".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen_r = Vec::with_capacity(n_eval);
    let mut chosen_r = Vec::with_capacity(n_eval);
    let mut gen_j = Vec::with_capacity(n_eval);
    let mut chosen_j = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut x = task.prompts() - 1;
        for (i, w) in task.prompt_weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                x = i;
                break;
            }
        }
        let mask = task.support_mask(x);
        let ref_lp = reference.log_probs(x)?;
        let a = sample_from_log_probs(&ref_lp, Some(&mask), &mut rng)?;
        let mut b = a;
        for _ in 0..crate::preference_data::MAX_COLLISION_RETRIES {
            b = sample_from_log_probs(&ref_lp, Some(&mask), &mut rng)?;
            if b != a {
                break;
            }
        }
        let chosen = if task.reward(x, b) > task.reward(x, a) { b } else { a };
        let g = sample_from_log_probs(&policy.log_probs(x)?, Some(&mask), &mut rng)?;
        gen_r.push(task.reward(x, g));
        chosen_r.push(task.reward(x, chosen));
        gen_j.push(judge[x][g]);
        chosen_j.push(judge[x][chosen]);
    }
    Ok(PolicyEvaluation {
        n_eval,
        win_rate: win_rate(&gen_r, &chosen_r)?,
        eval_reward: eval_reward(&gen_r)?,
        judge_win_rate: win_rate(&gen_j, &chosen_j)?,
        expected_reward: expected_reward(policy, task, &task.reward_table)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyParams, ReferencePolicy};
    use proptest::prelude::*;

    #[test]
    fn win_rate_examples() {
        assert_eq!(win_rate(&[2.0, 3.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(win_rate(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        let w = win_rate(&[2.0, 0.0, 5.0], &[1.0, 1.0, 5.0]).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-12);
        assert!(win_rate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn eval_reward_examples() {
        assert_eq!(eval_reward(&[1.0]).unwrap(), 1.0);
        assert_eq!(eval_reward(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(eval_reward(&[]).is_err());
    }

    #[test]
    fn sampled_reward_matches_expectation() {
        let task = GroundTruthTask::synthetic(3, 5, 2.0, 1).unwrap();
        let policy = PolicyParams::tabular(3, 5, (0..15).map(|i| (i % 4) as f64 * 0.7).collect()).unwrap();
        let reference = ReferencePolicy::uniform(3, 5).unwrap();
        let n = 10_000;
        let ev = evaluate_policy(&policy, &reference, &task, &task.reward_table, n, 3).unwrap();
        // rewards lie in [0, 2], so the standard deviation is at most 1
        let bound = 4.0 / (n as f64).sqrt();
        assert!((ev.eval_reward - ev.expected_reward).abs() < bound, "{ev:?}");
        assert_eq!(ev.win_rate, ev.judge_win_rate);
    }

    proptest! {
        #[test]
        fn wins_and_non_wins_partition(pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..50)) {
            let g: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let c: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let w = win_rate(&g, &c).unwrap();
            let rest = g.iter().zip(&c).filter(|(a, b)| a <= b).count() as f64 / g.len() as f64;
            prop_assert!((w + rest - 1.0).abs() < 1e-12);
        }
    }
}
