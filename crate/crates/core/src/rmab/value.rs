//! Single-arm Q-values under a passive subsidy and the Whittle index.

use super::{Arm, RewardExpr};
use crate::error::{Error, Result};

/// `q[s][a]`.
pub type QTable = [[f64; 2]; 2];

pub const DEFAULT_WHITTLE_TOLERANCE: f64 = 1e-6;

/// Value-iteration stopping tolerance, relative to `max(1, |V|)`.
const VI_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

fn backup(arm: &Arm, rewards: [f64; 2], lambda: f64, gamma: f64, v: [f64; 2]) -> QTable {
    let mut q = [[0.0; 2]; 2];
    for (s, row) in q.iter_mut().enumerate() {
        for (a, slot) in row.iter_mut().enumerate() {
            let t = arm.transitions[s][a];
            let subsidy = if a == 0 { lambda } else { 0.0 };
            *slot = rewards[s] + subsidy + gamma * (t[0] * v[0] + t[1] * v[1]);
        }
    }
    q
}

/// Q-values with the sup-norm change of `V` after every sweep.
pub fn q_value_traced(arm: &Arm, expr: &RewardExpr, lambda: f64, gamma: f64) -> (QTable, Vec<f64>) {
    let rewards = arm.rewards(expr);
    let mut v = [0.0; 2];
    let mut diffs = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let q = backup(arm, rewards, lambda, gamma, v);
        let next = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
        let diff = (next[0] - v[0]).abs().max((next[1] - v[1]).abs());
        v = next;
        diffs.push(diff);
        let scale = 1f64.max(v[0].abs()).max(v[1].abs());
        // the remaining error is at most diff * γ / (1 - γ)
        if gamma == 0.0 || diff == 0.0 || diff * gamma <= VI_TOLERANCE * scale * (1.0 - gamma) {
            break;
        }
    }
    (backup(arm, rewards, lambda, gamma, v), diffs)
}

/// Infinite-horizon discounted Q-values; the passive action earns `λ` on top
/// of the state reward.
pub fn q_value(arm: &Arm, expr: &RewardExpr, lambda: f64, gamma: f64) -> QTable {
    q_value_traced(arm, expr, lambda, gamma).0
}

/// Half-width of the subsidy bracket searched by [`whittle_index`].
pub fn whittle_lambda_max(arm: &Arm, expr: &RewardExpr, gamma: f64) -> f64 {
    let r = arm.rewards(expr);
    let m = r[0].abs().max(r[1].abs());
    if m == 0.0 {
        1.0
    } else {
        m * (1.0 + gamma) / (1.0 - gamma)
    }
}

/// Smallest subsidy at which staying passive in state `s` is as good as
/// acting, found by bisection to a bracket of width `tolerance`.
pub fn whittle_index(arm: &Arm, expr: &RewardExpr, s: usize, gamma: f64, tolerance: f64) -> Result<f64> {
    if s > 1 {
        return Err(Error::invalid(format!("state must be 0 or 1, got {s}")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tolerance}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let passive_advantage = |lambda: f64| {
        let q = q_value(arm, expr, lambda, gamma);
        q[s][0] - q[s][1]
    };
    let bound = whittle_lambda_max(arm, expr, gamma);
    let (mut lo, mut hi) = (-bound, bound);
    let (f_lo, f_hi) = (passive_advantage(lo), passive_advantage(hi));
    if !(f_lo < 0.0 && f_hi >= 0.0) {
        return Err(Error::NonIndexable(format!(
            "no crossing in [{lo}, {hi}] for state {s}: passive advantage {f_lo} .. {f_hi}"
        )));
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if passive_advantage(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
