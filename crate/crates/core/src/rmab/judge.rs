//! Trajectory statistics and the synthetic judge that compares them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{Category, FeatureId, FEATURE_COUNT};
use super::RmabInstance;
use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::preference_data::SoftLabel;

/// Engagement totals over a horizon: `by_feature[f]` counts engaged
/// arm-steps of arms carrying feature `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub total: f64,
    pub by_feature: Vec<f64>,
}

impl Default for TrajectoryStats {
    fn default() -> Self {
        Self {
            total: 0.0,
            by_feature: vec![0.0; FEATURE_COUNT],
        }
    }
}

impl TrajectoryStats {
    /// Recomputes totals from raw joint states.
    pub fn from_states(instance: &RmabInstance, states: &[Vec<u8>]) -> Self {
        let mut stats = Self::default();
        for row in states {
            for (arm, &s) in instance.arms.iter().zip(row) {
                if s == 1 {
                    stats.total += 1.0;
                    for f in arm.features.iter() {
                        stats.by_feature[f.index()] += 1.0;
                    }
                }
            }
        }
        stats
    }

    pub fn feature(&self, name: &str) -> Option<f64> {
        FeatureId::by_name(name).map(|f| self.by_feature[f.index()])
    }

    pub fn category_total(&self, category: Category) -> f64 {
        FeatureId::in_category(category).map(|f| self.by_feature[f.index()]).sum()
    }

    fn check(&self) -> Result<()> {
        if self.by_feature.len() != FEATURE_COUNT {
            return Err(Error::invalid(format!(
                "statistics cover {} features, schema has {FEATURE_COUNT}",
                self.by_feature.len()
            )));
        }
        Ok(())
    }

    /// Judge-prompt style breakdown, one block per category.
    pub fn render(&self) -> String {
        let mut out = format!("Total engagement: {:.2}\n", self.total);
        for c in Category::ALL {
            out.push_str(&format!("\nCategory: {}\n", c.label()));
            for f in FeatureId::in_category(c) {
                out.push_str(&format!("{}: {:.2}\n", f.def().description, self.by_feature[f.index()]));
            }
        }
        out
    }
}

/// Emphasis over features; the synthetic analogue of a natural-language
/// prioritization command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritySpec {
    #[serde(default)]
    pub description: String,
    pub weights: BTreeMap<String, f64>,
}

impl PrioritySpec {
    pub fn new(description: impl Into<String>, weights: BTreeMap<String, f64>) -> Result<Self> {
        let spec = Self {
            description: description.into(),
            weights,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Weight 1 on every feature.
    pub fn uniform() -> Self {
        Self {
            description: "Treat all beneficiaries alike".into(),
            weights: FeatureId::all().map(|f| (f.name().to_string(), 1.0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in &self.weights {
            if FeatureId::by_name(name).is_none() {
                return Err(Error::invalid(format!("priority names unknown feature {name:?}")));
            }
            if !w.is_finite() {
                return Err(Error::invalid(format!("priority weight for {name} is not finite")));
            }
        }
        if self.weights.values().all(|&w| w == 0.0) {
            return Err(Error::invalid("priority needs at least one nonzero weight"));
        }
        Ok(())
    }

    pub fn score(&self, stats: &TrajectoryStats) -> Result<f64> {
        stats.check()?;
        let mut score = 0.0;
        for (name, w) in &self.weights {
            let f = FeatureId::by_name(name).ok_or_else(|| Error::invalid(format!("unknown feature {name:?}")))?;
            score += w * stats.by_feature[f.index()];
        }
        Ok(score)
    }
}

/// `q = σ((score_a - score_b) / temperature)`.
pub fn synthetic_judge(
    stats_a: &TrajectoryStats,
    stats_b: &TrajectoryStats,
    priority: &PrioritySpec,
    temperature: f64,
) -> Result<SoftLabel> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("judge temperature must be positive, got {temperature}")));
    }
    priority.validate()?;
    let diff = priority.score(stats_a)? - priority.score(stats_b)?;
    SoftLabel::new(sigmoid(diff / temperature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(values: &[(usize, f64)]) -> TrajectoryStats {
        let mut s = TrajectoryStats::default();
        for &(i, v) in values {
            s.by_feature[i] = v;
            s.total += v;
        }
        s
    }

    #[test]
    fn judge_examples() {
        let p = PrioritySpec::uniform();
        let a = stats(&[(3, 20.0), (7, 5.0)]);
        assert_eq!(synthetic_judge(&a, &a, &p, 2.0).unwrap().q(), 0.5);
        let b = stats(&[(3, 10.0), (7, 5.0)]);
        assert!(synthetic_judge(&a, &b, &p, 1e-9).unwrap().q() > 1.0 - 1e-12);
        let q = synthetic_judge(&a, &b, &p, 10.0).unwrap().q();
        assert!((q - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((q - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn judge_errors() {
        let p = PrioritySpec::uniform();
        let a = TrajectoryStats::default();
        let short = TrajectoryStats { total: 0.0, by_feature: vec![0.0; 3] };
        assert!(synthetic_judge(&a, &short, &p, 1.0).is_err());
        assert!(synthetic_judge(&a, &a, &p, 0.0).is_err());
        let zero = PrioritySpec { description: String::new(), weights: [("oldest_age".to_string(), 0.0)].into() };
        assert!(synthetic_judge(&a, &a, &zero, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn judge_is_symmetric(xs in proptest::collection::vec(0.0f64..500.0, FEATURE_COUNT),
                              ys in proptest::collection::vec(0.0f64..500.0, FEATURE_COUNT),
                              tau in 0.1f64..100.0) {
            let a = TrajectoryStats { total: xs.iter().sum(), by_feature: xs };
            let b = TrajectoryStats { total: ys.iter().sum(), by_feature: ys };
            let p = PrioritySpec::uniform();
            let sum = synthetic_judge(&a, &b, &p, tau).unwrap().q() + synthetic_judge(&b, &a, &p, tau).unwrap().q();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }
}
