//! Per-example worst-case preference probability.
//!
//! For one `(prompt, response_a, response_b)` triple with observed soft label
//! `q`, the adversary picks the preference probability `p` inside a
//! divergence ball of radius `rho` around `q` that maximizes the expected
//! per-example loss
//!
//! ```text
//! p * l_pos + (1 - p) * l_neg
//! ```
//!
//! where `l_pos` is the loss of labelling `response_a` as preferred and
//! `l_neg` the loss of the opposite label. The objective is linear in `p`,
//! so the maximizer sits at the edge of the feasible interval on the side
//! selected by the sign of `l_pos - l_neg`.
//!
//! Three ambiguity sets are supported:
//!
//! * `Chi2`: `(p - q)^2 / (q (1 - q)) <= rho`, defined for `q` in `(0, 1)`.
//! * `Chi2Relaxed`: `(p - q)^2 <= rho q (1 - q)`, defined on all of `[0, 1]`
//!   and collapsing to `p = q` at the boundary, so hard labels reduce to
//!   plain DPO.
//! * `Kl`: `KL(p ‖ q) <= rho`, solved by bisection on the monotone branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bernoulli_kl;

/// Absolute tolerance on `p` for the KL bisection. The loop continues past
/// this until the bracket stops shrinking in floating point.
pub const KL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Chi2,
    Chi2Relaxed,
    Kl,
}

impl Divergence {
    pub fn name(self) -> &'static str {
        match self {
            Divergence::Chi2 => "chi2",
            Divergence::Chi2Relaxed => "chi2_relaxed",
            Divergence::Kl => "kl",
        }
    }
}

impl std::str::FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi2" => Ok(Divergence::Chi2),
            "chi2_relaxed" | "chi2-relaxed" => Ok(Divergence::Chi2Relaxed),
            "kl" => Ok(Divergence::Kl),
            other => Err(Error::invalid(format!("unknown divergence {other:?}"))),
        }
    }
}

/// Divergence family plus radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    pub divergence: Divergence,
    pub rho: f64,
}

impl AmbiguitySpec {
    pub fn new(divergence: Divergence, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
        }
        Ok(Self { divergence, rho })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.divergence, self.rho).map(|_| ())
    }

    /// Worst case for this ambiguity set.
    pub fn worst_case(&self, q: f64, side: Side) -> Result<WorstCaseResult> {
        match self.divergence {
            Divergence::Chi2 => worst_case_chi2(q, self.rho, side),
            Divergence::Chi2Relaxed => worst_case_chi2_relaxed(q, self.rho, side),
            Divergence::Kl => worst_case_kl(q, self.rho, side),
        }
    }
}

/// Direction in which the adversary pushes `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `l_pos > l_neg`: raising `p` raises the loss.
    FavoringA,
    /// `l_pos < l_neg`: lowering `p` raises the loss.
    FavoringB,
    /// `l_pos == l_neg`: the objective does not depend on `p`.
    Tie,
}

impl Side {
    pub fn from_losses(l_pos: f64, l_neg: f64) -> Self {
        if l_pos > l_neg {
            Side::FavoringA
        } else if l_pos < l_neg {
            Side::FavoringB
        } else {
            Side::Tie
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            Side::FavoringA => Side::FavoringB,
            Side::FavoringB => Side::FavoringA,
            Side::Tie => Side::Tie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    pub p_hat: f64,
    /// `|p_hat - q|`, the factor multiplying `|l_pos - l_neg|` in the
    /// regularized form of the robust loss.
    pub penalty_coefficient: f64,
}

impl WorstCaseResult {
    fn at(q: f64, p_hat: f64) -> Self {
        Self {
            p_hat,
            penalty_coefficient: (p_hat - q).abs(),
        }
    }
}

fn check_probability(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("probability must lie in [0, 1], got {q}")));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
    }
    Ok(())
}

fn chi2_edge(q: f64, rho: f64, side: Side) -> f64 {
    let radius = (rho * q * (1.0 - q)).sqrt();
    match side {
        Side::FavoringA => (q + radius).min(1.0),
        Side::FavoringB => (q - radius).max(0.0),
        Side::Tie => q,
    }
}

/// Closed-form maximizer under the strict chi-squared ball.
pub fn worst_case_chi2(q: f64, rho: f64, side: Side) -> Result<WorstCaseResult> {
    check_probability(q)?;
    check_rho(rho)?;
    if q == 0.0 || q == 1.0 {
        return Err(Error::Domain {
            q,
            divergence: Divergence::Chi2.name(),
        });
    }
    Ok(WorstCaseResult::at(q, chi2_edge(q, rho, side)))
}

/// Closed-form maximizer under `(p - q)^2 <= rho q (1 - q)`.
pub fn worst_case_chi2_relaxed(q: f64, rho: f64, side: Side) -> Result<WorstCaseResult> {
    check_probability(q)?;
    check_rho(rho)?;
    Ok(WorstCaseResult::at(q, chi2_edge(q, rho, side)))
}

/// Maximizer under `KL(p ‖ q) <= rho`.
///
/// `KL(· ‖ q)` is strictly increasing on `[q, 1]` and strictly decreasing on
/// `[0, q]`, so each side has at most one crossing. The downward side is
/// solved as the upward side of the mirrored problem `(1 - q)`.
pub fn worst_case_kl(q: f64, rho: f64, side: Side) -> Result<WorstCaseResult> {
    check_probability(q)?;
    check_rho(rho)?;
    if q == 0.0 || q == 1.0 {
        return Err(Error::Domain {
            q,
            divergence: Divergence::Kl.name(),
        });
    }
    let p_hat = match side {
        Side::Tie => q,
        Side::FavoringA => kl_upper_edge(q, rho),
        Side::FavoringB => 1.0 - kl_upper_edge(1.0 - q, rho),
    };
    Ok(WorstCaseResult::at(q, p_hat))
}

/// Largest `p >= q` with `KL(p ‖ q) <= rho`.
fn kl_upper_edge(q: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        return q;
    }
    // KL(1 ‖ q) = -ln q
    if -q.ln() <= rho {
        return 1.0;
    }
    let (mut lo, mut hi) = (q, 1.0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bernoulli_kl(mid, q) <= rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    debug_assert!(hi - lo <= KL_TOLERANCE);
    lo
}

/// Uncertainty-weighted coefficient from the closed-form case split:
/// `min{1 - q, sqrt(rho q (1 - q))}` when favoring `a`, `min{q, sqrt(..)}`
/// when favoring `b`, and zero at a tie.
pub fn penalty_coefficient(q: f64, rho: f64, side: Side) -> Result<f64> {
    check_probability(q)?;
    check_rho(rho)?;
    let radius = (rho * q * (1.0 - q)).sqrt();
    Ok(match side {
        Side::FavoringA => (1.0 - q).min(radius),
        Side::FavoringB => q.min(radius),
        Side::Tie => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(p: f64, l_pos: f64, l_neg: f64) -> f64 {
        p * l_pos + (1.0 - p) * l_neg
    }

    /// Exhaustive scan of the `step` grid on `[0, 1]`.
    fn grid_argmax(
        q: f64,
        l_pos: f64,
        l_neg: f64,
        feasible: impl Fn(f64) -> bool,
        step: f64,
    ) -> f64 {
        let n = (1.0 / step).round() as usize;
        let mut best = (f64::NEG_INFINITY, q);
        for i in 0..=n {
            let p = i as f64 * step;
            if feasible(p) {
                let v = objective(p, l_pos, l_neg);
                if v > best.0 {
                    best = (v, p);
                }
            }
        }
        best.1
    }

    #[test]
    fn chi2_zero_radius_is_identity() {
        for side in [Side::FavoringA, Side::FavoringB, Side::Tie] {
            assert_eq!(worst_case_chi2(0.5, 0.0, side).unwrap().p_hat, 0.5);
        }
    }

    #[test]
    fn chi2_matches_grid_oracle() {
        let feasible = |q: f64, rho: f64| move |p: f64| (p - q).powi(2) / (q * (1.0 - q)) <= rho + 1e-15;
        let p = grid_argmax(0.5, 1.0, 0.0, feasible(0.5, 0.04), 1e-6);
        assert!((p - 0.6).abs() <= 1e-6, "oracle {p}");
        let got = worst_case_chi2(0.5, 0.04, Side::FavoringA).unwrap();
        assert!((got.p_hat - 0.6).abs() < 1e-12);

        let p = grid_argmax(0.9, 1.0, 0.0, feasible(0.9, 1.0), 1e-6);
        assert_eq!(p, 1.0);
        assert_eq!(worst_case_chi2(0.9, 1.0, Side::FavoringA).unwrap().p_hat, 1.0);
    }

    #[test]
    fn chi2_boundary_labels_are_domain_errors() {
        assert!(matches!(worst_case_chi2(0.0, 0.1, Side::FavoringA), Err(Error::Domain { .. })));
        assert!(matches!(worst_case_chi2(1.0, 0.1, Side::FavoringB), Err(Error::Domain { .. })));
        assert!(worst_case_chi2(1.2, 0.1, Side::FavoringB).is_err());
        assert!(worst_case_chi2(0.5, -0.1, Side::FavoringB).is_err());
    }

    #[test]
    fn relaxed_collapses_at_boundary() {
        for side in [Side::FavoringA, Side::FavoringB, Side::Tie] {
            for rho in [0.0, 0.1, 5.0] {
                assert_eq!(worst_case_chi2_relaxed(1.0, rho, side).unwrap().p_hat, 1.0);
                assert_eq!(worst_case_chi2_relaxed(0.0, rho, side).unwrap().p_hat, 0.0);
            }
        }
        let feasible = |p: f64| (p - 0.5f64).powi(2) <= 0.04 * 0.25 + 1e-15;
        let oracle = grid_argmax(0.5, 0.0, 1.0, feasible, 1e-6);
        assert!((oracle - 0.4).abs() <= 1e-6);
        let got = worst_case_chi2_relaxed(0.5, 0.04, Side::FavoringB).unwrap();
        assert!((got.p_hat - 0.4).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(worst_case_kl(0.5, 0.0, Side::FavoringA).unwrap().p_hat, 0.5);
        assert_eq!(worst_case_kl(0.5, 0.0, Side::FavoringB).unwrap().p_hat, 0.5);

        let got = worst_case_kl(0.5, 0.02, Side::FavoringA).unwrap().p_hat;
        assert!(got > 0.5);
        assert!((bernoulli_kl(got, 0.5) - 0.02).abs() < 1e-8);
        // dense grid locates the crossing
        let step = 1e-6;
        let crossing = (0..=500_000)
            .map(|i| 0.5 + i as f64 * step)
            .take_while(|&p| bernoulli_kl(p, 0.5) <= 0.02)
            .last()
            .unwrap();
        assert!((got - crossing).abs() <= step);

        assert!(-(0.9f64.ln()) <= 10.0);
        assert_eq!(worst_case_kl(0.9, 10.0, Side::FavoringA).unwrap().p_hat, 1.0);
        assert!(matches!(worst_case_kl(1.0, 0.1, Side::FavoringA), Err(Error::Domain { .. })));
    }

    #[test]
    fn penalty_examples() {
        let c = penalty_coefficient(0.5, 0.008, Side::FavoringA).unwrap();
        assert!((c - 0.002f64.sqrt()).abs() < 1e-15);
        assert!((c - 0.044721).abs() < 1e-6);
        assert_eq!(penalty_coefficient(1.0, 3.0, Side::FavoringA).unwrap(), 0.0);
        assert_eq!(penalty_coefficient(0.3, 3.0, Side::Tie).unwrap(), 0.0);
    }

    #[test]
    fn coefficient_peak_moves_below_half_once_rho_exceeds_one() {
        // The two branches meet at q = 1 / (1 + rho).
        let argmax = |rho: f64| {
            (1..=99)
                .map(|i| i as f64 / 100.0)
                .map(|q| (q, penalty_coefficient(q, rho, Side::FavoringA).unwrap()))
                .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
                .0
        };
        assert_eq!(argmax(0.008), 0.5);
        assert_eq!(argmax(0.5), 0.5);
        assert_eq!(argmax(1.0), 0.5);
        assert!((argmax(2.0) - 1.0 / 3.0).abs() <= 0.01);
        assert!((argmax(4.0) - 0.2).abs() <= 0.01);
    }

    #[test]
    fn tie_returns_q_for_every_divergence() {
        let spec = |d| AmbiguitySpec::new(d, 0.3).unwrap();
        for d in [Divergence::Chi2, Divergence::Chi2Relaxed, Divergence::Kl] {
            assert_eq!(spec(d).worst_case(0.37, Side::Tie).unwrap().p_hat, 0.37);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn side() -> impl Strategy<Value = Side> {
            prop_oneof![Just(Side::FavoringA), Just(Side::FavoringB)]
        }

        fn divergence() -> impl Strategy<Value = Divergence> {
            prop_oneof![Just(Divergence::Chi2), Just(Divergence::Chi2Relaxed), Just(Divergence::Kl)]
        }

        proptest! {
            #[test]
            fn feasible_and_adversarial(q in 0.001f64..0.999, rho in 0.0f64..3.0, side in side(),
                                        d in divergence(), l_pos in 0.0f64..10.0, l_neg in 0.0f64..10.0) {
                let spec = AmbiguitySpec::new(d, rho).unwrap();
                let res = spec.worst_case(q, side).unwrap();
                prop_assert!((0.0..=1.0).contains(&res.p_hat));
                let slack = match d {
                    Divergence::Chi2 => (res.p_hat - q).powi(2) / (q * (1.0 - q)) - rho,
                    Divergence::Chi2Relaxed => (res.p_hat - q).powi(2) - rho * q * (1.0 - q),
                    Divergence::Kl => bernoulli_kl(res.p_hat, q) - rho,
                };
                prop_assert!(slack <= 1e-9, "slack {}", slack);
                let side = Side::from_losses(l_pos, l_neg);
                let res = spec.worst_case(q, side).unwrap();
                let adv = res.p_hat * l_pos + (1.0 - res.p_hat) * l_neg;
                prop_assert!(adv >= q * l_pos + (1.0 - q) * l_neg - 1e-12);
            }

            #[test]
            fn radius_monotone(q in 0.001f64..0.999, r1 in 0.0f64..3.0, r2 in 0.0f64..3.0,
                               side in side(), d in divergence()) {
                let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
                let a = AmbiguitySpec::new(d, lo).unwrap().worst_case(q, side).unwrap();
                let b = AmbiguitySpec::new(d, hi).unwrap().worst_case(q, side).unwrap();
                prop_assert!((a.p_hat - q).abs() <= (b.p_hat - q).abs() + 1e-15);
            }

            #[test]
            fn side_mirror(q in 0.001f64..0.999, rho in 0.0f64..3.0, d in divergence()) {
                let spec = AmbiguitySpec::new(d, rho).unwrap();
                let up = spec.worst_case(q, Side::FavoringA).unwrap().p_hat;
                let down = spec.worst_case(1.0 - q, Side::FavoringB).unwrap().p_hat;
                prop_assert!((up - (1.0 - down)).abs() <= 1e-12);
            }

            #[test]
            fn penalty_is_displacement(q in 0.0f64..=1.0, rho in 0.0f64..3.0, side in side()) {
                let res = worst_case_chi2_relaxed(q, rho, side).unwrap();
                let coeff = penalty_coefficient(q, rho, side).unwrap();
                prop_assert!((coeff - (res.p_hat - q).abs()).abs() <= 1e-15);
                prop_assert_eq!(res.penalty_coefficient, (res.p_hat - q).abs());
            }
        }
    }
}
