//! Restless bandits with two-state engagement arms.
//!
//! An arm is a Markov chain over `s ∈ {0, 1}` (disengaged, engaged) whose
//! transition row depends on whether the arm is acted on (`a = 1`) or left
//! passive (`a = 0`). Each step a planner may act on at most `K` arms; the
//! reward of an arm in state `s` is a [`RewardExpr`] evaluated on `s` and the
//! arm's beneficiary features.

pub mod dsl;
pub mod features;
mod judge;
mod planner;
mod prefs;
mod simulate;
mod value;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dsl::{parse_reward, BinaryOp, ParseError, ParseErrorKind, RewardExpr};
pub use features::{Category, FeatureId, FeatureSet, FEATURE_COUNT, SCHEMA};
pub use judge::{synthetic_judge, PrioritySpec, TrajectoryStats};
pub use planner::{brute_force_plan, evaluate_policy_exact, MAX_PLAN_ARMS, MAX_PLAN_HORIZON};
pub use prefs::{
    build_preference_dataset, count_preference_examples, generate_candidates, generate_commands, PrefBuildConfig,
    PreferenceBuild,
};
pub use simulate::{simulate, top_k_step, ArmSelector, Simulation, WhittlePolicy};
pub use value::{q_value, q_value_traced, whittle_index, whittle_lambda_max, QTable, DEFAULT_WHITTLE_TOLERANCE};

/// Row-sum tolerance for transition tensors.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// `transitions[s][a][s_next]`.
pub type Transitions = [[[f64; 2]; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub transitions: Transitions,
    #[serde(default)]
    pub features: FeatureSet,
}

impl Arm {
    pub fn new(transitions: Transitions, features: FeatureSet) -> Result<Self> {
        let arm = Self { transitions, features };
        arm.validate()?;
        Ok(arm)
    }

    /// Arm from engagement probabilities `P(s' = 1 | s, a)` as `p[s][a]`.
    pub fn from_engagement(p: [[f64; 2]; 2], features: FeatureSet) -> Result<Self> {
        let row = |x: f64| [1.0 - x, x];
        Self::new(
            [[row(p[0][0]), row(p[0][1])], [row(p[1][0]), row(p[1][1])]],
            features,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for s in 0..2 {
            for a in 0..2 {
                let row = self.transitions[s][a];
                if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::invalid(format!("T[{s}][{a}] has a negative or non-finite entry")));
                }
                if (row[0] + row[1] - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::invalid(format!("T[{s}][{a}] sums to {}", row[0] + row[1])));
                }
            }
        }
        Ok(())
    }

    /// `R(s)` for both states.
    pub fn rewards(&self, expr: &RewardExpr) -> [f64; 2] {
        [expr.eval(0, self.features), expr.eval(1, self.features)]
    }

    pub fn engage_prob(&self, s: usize, a: usize) -> f64 {
        self.transitions[s][a][1]
    }
}

fn default_initial() -> Vec<u8> {
    Vec::new()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmabInstance {
    pub arms: Vec<Arm>,
    pub budget: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub reward: RewardExpr,
    /// Starting states; empty means every arm starts engaged.
    #[serde(default = "default_initial")]
    pub initial_states: Vec<u8>,
}

impl RmabInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.arms.len();
        if n == 0 {
            return Err(Error::invalid("instance has no arms"));
        }
        if self.budget == 0 || self.budget > n {
            return Err(Error::invalid(format!("budget must lie in 1..={n}, got {}", self.budget)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !self.initial_states.is_empty() {
            if self.initial_states.len() != n {
                return Err(Error::invalid(format!(
                    "{} initial states for {n} arms",
                    self.initial_states.len()
                )));
            }
            if self.initial_states.iter().any(|&s| s > 1) {
                return Err(Error::invalid("initial states must be 0 or 1"));
            }
        }
        for (i, arm) in self.arms.iter().enumerate() {
            arm.validate().map_err(|e| Error::invalid(format!("arm {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn start_states(&self) -> Vec<u8> {
        if self.initial_states.is_empty() {
            vec![1; self.arms.len()]
        } else {
            self.initial_states.clone()
        }
    }

    pub fn with_reward(&self, reward: RewardExpr) -> Self {
        Self {
            reward,
            ..self.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let inst: Self = serde_json::from_str(&text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// Parameters of the synthetic population generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub arms: usize,
    pub budget: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub reward: RewardExpr,
    pub seed: u64,
}

fn one_of<R: Rng>(category: Category, rng: &mut R, set: &mut FeatureSet) {
    let ids: Vec<FeatureId> = FeatureId::in_category(category).collect();
    set.insert(ids[rng.random_range(0..ids.len())]);
}

/// Random beneficiary: one flag from every exclusive category, a spoken
/// language, and coin flips for the bucketed registration fields.
pub fn random_features<R: Rng>(rng: &mut R) -> FeatureSet {
    let mut set = FeatureSet::empty();
    for c in Category::ALL {
        if c.is_exclusive() {
            one_of(c, rng, &mut set);
        }
    }
    one_of(Category::Language, rng, &mut set);
    for id in FeatureId::in_category(Category::Registration) {
        if rng.random_bool(0.5) {
            set.insert(id);
        }
    }
    set
}

/// Samples transitions with Beta(2, 2) rows where acting stochastically
/// dominates staying passive, plus random features and start states.
pub fn gen_instance(spec: &InstanceSpec) -> Result<RmabInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beta = Beta::new(2.0, 2.0).expect("valid beta");
    let mut arms = Vec::with_capacity(spec.arms);
    for _ in 0..spec.arms {
        let mut p = [[0.0; 2]; 2];
        for row in p.iter_mut() {
            let passive: f64 = beta.sample(&mut rng);
            let lift: f64 = beta.sample(&mut rng);
            *row = [passive, passive + (1.0 - passive) * lift];
        }
        // engaged arms stay engaged more often
        if p[1][0] < p[0][0] {
            p.swap(0, 1);
        }
        arms.push(Arm::from_engagement(p, random_features(&mut rng))?);
    }
    let initial_states = (0..spec.arms).map(|_| rng.random_bool(0.5) as u8).collect();
    let inst = RmabInstance {
        arms,
        budget: spec.budget,
        gamma: spec.gamma,
        horizon: spec.horizon,
        reward: spec.reward.clone(),
        initial_states,
    };
    inst.validate()?;
    Ok(inst)
}
