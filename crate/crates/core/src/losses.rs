//! DPO, preference-robust DPO and the DrDPO baseline, with gradients.
//!
//! Notation per example: `m` is the margin, `l_pos = softplus(-m)` the loss
//! of the label "a preferred" and `l_neg = softplus(m)` the loss of the
//! opposite label. Every loss here is built from per-example contributions
//! of the form `w * l_pos + (1 - w) * l_neg`:
//!
//! | loss            | weight `w`                                   |
//! |-----------------|----------------------------------------------|
//! | DPO, soft label | `q`                                          |
//! | DPO, hard label | `1` for `+1`, `0` for `-1`                   |
//! | DPO-PRO         | worst-case `p̂` inside the ambiguity set       |
//!
//! Because `∂/∂m [w l_pos + (1 - w) l_neg] = σ(m) - w`, the gradient of any
//! of them with `w` held fixed is `(σ(m) - w) ∂m/∂θ`. Holding `p̂` fixed is
//! exactly the envelope-theorem gradient of the inner maximum.
//!
//! DrDPO instead reweights whole examples: `β' ln mean_i exp(L_i / β')`
//! over the per-example DPO losses `L_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_mean_exp, sigmoid, softmax, softplus};
use crate::policy::{Margin, Policy};
use crate::preference_data::{HardLabel, Label, PreferenceExample};
use crate::robust_inner::{penalty_coefficient, worst_case_chi2, AmbiguitySpec, Divergence, Side};

/// DPO temperature used throughout unless configured otherwise.
pub const DEFAULT_BETA: f64 = 0.25;

/// DrDPO temperature fallback.
pub const DEFAULT_BETA_PRIME: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrDpoSpec {
    pub beta_prime: f64,
}

impl DrDpoSpec {
    pub fn new(beta_prime: f64) -> Result<Self> {
        if !(beta_prime > 0.0) || !beta_prime.is_finite() {
            return Err(Error::invalid(format!("beta_prime must be positive, got {beta_prime}")));
        }
        Ok(Self { beta_prime })
    }
}

impl Default for DrDpoSpec {
    fn default() -> Self {
        Self {
            beta_prime: DEFAULT_BETA_PRIME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Dpo,
    DpoPro { ambiguity: AmbiguitySpec },
    /// DPO plus the explicit confidence-gap penalty. Same value as `DpoPro`
    /// for chi-squared sets, computed along an independent path.
    DpoProRegularized { ambiguity: AmbiguitySpec },
    DrDpo { spec: DrDpoSpec },
}

impl LossKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LossKind::Dpo => "dpo",
            LossKind::DpoPro { .. } => "dpo_pro",
            LossKind::DpoProRegularized { .. } => "dpo_pro_regularized",
            LossKind::DrDpo { .. } => "drdpo",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Dpo => Ok(()),
            LossKind::DpoPro { ambiguity } | LossKind::DpoProRegularized { ambiguity } => {
                ambiguity.validate()
            }
            LossKind::DrDpo { spec } => DrDpoSpec::new(spec.beta_prime).map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleTerms {
    pub margin: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    /// Probability placed on `l_pos`: `q`, the hard-label indicator or `p̂`.
    pub weight: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBatchResult {
    pub loss: f64,
    pub per_example: Vec<ExampleTerms>,
    pub gradient: Option<Vec<f64>>,
}

/// Evaluation switches shared by all losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub gradient: bool,
    pub reduction: Reduction,
}

/// `-ln σ(c m)`.
pub fn per_sample_loss(margin: Margin, c: HardLabel) -> f64 {
    softplus(-c.sign() * margin.m)
}

fn pair_losses(m: f64) -> (f64, f64) {
    (softplus(-m), softplus(m))
}

fn dpo_weight(label: Label) -> f64 {
    label.target()
}

fn robust_weight(label: Label, l_pos: f64, l_neg: f64, ambiguity: &AmbiguitySpec) -> Result<f64> {
    match label {
        // hard labels are treated as ground truth
        Label::Hard(_) => Ok(label.target()),
        Label::Soft(s) => Ok(ambiguity.worst_case(s.q(), Side::from_losses(l_pos, l_neg))?.p_hat),
    }
}

/// `q ± coefficient`, the effective weight of the regularized form.
fn regularized_weight(label: Label, l_pos: f64, l_neg: f64, ambiguity: &AmbiguitySpec) -> Result<f64> {
    let q = match label {
        Label::Hard(_) => return Ok(label.target()),
        Label::Soft(s) => s.q(),
    };
    let side = Side::from_losses(l_pos, l_neg);
    let coeff = match ambiguity.divergence {
        Divergence::Chi2 => {
            // same domain as the closed form
            worst_case_chi2(q, ambiguity.rho, side)?;
            penalty_coefficient(q, ambiguity.rho, side)?
        }
        Divergence::Chi2Relaxed => penalty_coefficient(q, ambiguity.rho, side)?,
        // no closed-form coefficient; use the solver's displacement
        Divergence::Kl => ambiguity.worst_case(q, side)?.penalty_coefficient,
    };
    Ok(match side {
        Side::FavoringA => q + coeff,
        Side::FavoringB => q - coeff,
        Side::Tie => q,
    })
}

fn example_margin(
    example: &PreferenceExample,
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
) -> Result<f64> {
    let x = example.prompt_id.0;
    let (a, b) = (example.response_a.0, example.response_b.0);
    let lp = policy.log_probs(x)?;
    let (Some(pa), Some(pb)) = (lp.get(a), lp.get(b)) else {
        return Err(Error::invalid(format!(
            "prompt {x}: policy has no log-probability for response {} or {}",
            a, b
        )));
    };
    let ra = reference.log_prob(x, a)?;
    let rb = reference.log_prob(x, b)?;
    // non-finite margins surface as non-finite losses for the caller to report
    Ok(beta * ((pa - ra) - (pb - rb)))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Adds `scale * ∂m/∂θ` for one example into `out`.
fn accumulate_margin_grad(
    example: &PreferenceExample,
    policy: &dyn Policy,
    beta: f64,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let x = example.prompt_id.0;
    policy.accumulate_grad_log_prob(x, example.response_a.0, scale * beta, out)?;
    policy.accumulate_grad_log_prob(x, example.response_b.0, -scale * beta, out)
}

/// Evaluates any loss kind on a batch.
pub fn evaluate(
    batch: &[PreferenceExample],
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
    kind: &LossKind,
    opts: EvalOptions,
) -> Result<LossBatchResult> {
    check_beta(beta)?;
    kind.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if opts.gradient && policy.num_params() == 0 {
        return Err(Error::Unsupported("policy does not expose parameter gradients".into()));
    }

    let mut per_example = Vec::with_capacity(batch.len());
    for example in batch {
        let m = example_margin(example, policy, reference, beta)?;
        let (l_pos, l_neg) = pair_losses(m);
        let weight = match kind {
            LossKind::Dpo | LossKind::DrDpo { .. } => dpo_weight(example.label),
            LossKind::DpoPro { ambiguity } => robust_weight(example.label, l_pos, l_neg, ambiguity)?,
            LossKind::DpoProRegularized { ambiguity } => {
                regularized_weight(example.label, l_pos, l_neg, ambiguity)?
            }
        };
        let contribution = match kind {
            LossKind::DpoProRegularized { .. } => {
                let q = example.label.target();
                let base = q * l_pos + (1.0 - q) * l_neg;
                // (w - q) carries the sign of the gap, so this is the
                // coefficient times |l_pos - l_neg|
                base + (weight - q) * (l_pos - l_neg)
            }
            _ => weight * l_pos + (1.0 - weight) * l_neg,
        };
        per_example.push(ExampleTerms {
            margin: m,
            l_pos,
            l_neg,
            weight,
            contribution,
        });
    }

    let n = batch.len() as f64;
    let scale = match opts.reduction {
        Reduction::Mean => 1.0,
        Reduction::Sum => n,
    };

    let (loss, example_scales): (f64, Vec<f64>) = match kind {
        LossKind::DrDpo { spec } => {
            let scaled: Vec<f64> = per_example.iter().map(|t| t.contribution / spec.beta_prime).collect();
            let value = spec.beta_prime * log_mean_exp(&scaled);
            (scale * value, softmax(&scaled).into_iter().map(|w| scale * w).collect())
        }
        _ => {
            let total: f64 = per_example.iter().map(|t| t.contribution).sum();
            let per = scale / n;
            (per * total, vec![per; batch.len()])
        }
    };

    let gradient = if opts.gradient {
        let mut grad = vec![0.0; policy.num_params()];
        for ((example, terms), s) in batch.iter().zip(&per_example).zip(&example_scales) {
            let dloss_dm = sigmoid(terms.margin) - terms.weight;
            let coeff = s * dloss_dm;
            if coeff != 0.0 {
                accumulate_margin_grad(example, policy, beta, coeff, &mut grad)?;
            }
        }
        Some(grad)
    } else {
        None
    };

    Ok(LossBatchResult {
        loss,
        per_example,
        gradient,
    })
}

pub fn dpo_loss(
    batch: &[PreferenceExample],
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
) -> Result<LossBatchResult> {
    evaluate(batch, policy, reference, beta, &LossKind::Dpo, EvalOptions::default())
}

pub fn dpo_pro_loss(
    batch: &[PreferenceExample],
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
    ambiguity: AmbiguitySpec,
) -> Result<LossBatchResult> {
    evaluate(batch, policy, reference, beta, &LossKind::DpoPro { ambiguity }, EvalOptions::default())
}

pub fn dpo_pro_loss_regularized(
    batch: &[PreferenceExample],
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
    ambiguity: AmbiguitySpec,
) -> Result<LossBatchResult> {
    evaluate(
        batch,
        policy,
        reference,
        beta,
        &LossKind::DpoProRegularized { ambiguity },
        EvalOptions::default(),
    )
}

pub fn drdpo_loss(
    batch: &[PreferenceExample],
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
    spec: DrDpoSpec,
) -> Result<LossBatchResult> {
    evaluate(batch, policy, reference, beta, &LossKind::DrDpo { spec }, EvalOptions::default())
}

/// Mean-reduced gradient of `kind` with respect to the policy parameters.
pub fn loss_gradient(
    batch: &[PreferenceExample],
    policy: &dyn Policy,
    reference: &dyn Policy,
    beta: f64,
    kind: &LossKind,
) -> Result<Vec<f64>> {
    let opts = EvalOptions {
        gradient: true,
        reduction: Reduction::Mean,
    };
    let result = evaluate(batch, policy, reference, beta, kind, opts)?;
    Ok(result.gradient.expect("gradient requested"))
}

/// DrDPO surrogate over precomputed per-example losses.
pub fn drdpo_surrogate(losses: &[f64], spec: DrDpoSpec) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::invalid("empty loss list"));
    }
    let scaled: Vec<f64> = losses.iter().map(|l| l / spec.beta_prime).collect();
    Ok(spec.beta_prime * log_mean_exp(&scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyParams, ReferencePolicy};

    const LN2: f64 = std::f64::consts::LN_2;

    fn setup(logits: Vec<f64>) -> (PolicyParams, ReferencePolicy) {
        let r = logits.len();
        (PolicyParams::tabular(1, r, logits).unwrap(), ReferencePolicy::uniform(1, r).unwrap())
    }

    /// Tabular logits giving margin `m` on the pair (0, 1) with β = 1.
    fn with_margin(m: f64) -> (PolicyParams, ReferencePolicy) {
        setup(vec![m, 0.0, 0.0])
    }

    fn relaxed(rho: f64) -> AmbiguitySpec {
        AmbiguitySpec::new(Divergence::Chi2Relaxed, rho).unwrap()
    }

    #[test]
    fn per_sample_examples() {
        let m = |v| Margin::new(v, 1.0).unwrap();
        assert!((per_sample_loss(m(0.0), HardLabel::Positive) - LN2).abs() < 1e-15);
        // softplus(-2) = ln(1 + e^-2)
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((per_sample_loss(m(2.0), HardLabel::Positive) - expected).abs() < 1e-15);
        assert!((expected - 0.126928).abs() < 1e-6);
        let big = per_sample_loss(m(50.0), HardLabel::Negative);
        assert!((big - 50.0).abs() < 1e-12);
        assert!(per_sample_loss(m(0.0), HardLabel::Negative) > 0.0);
    }

    #[test]
    fn dpo_examples() {
        let batch = [PreferenceExample::soft(0, 0, 1, 0.5).unwrap()];
        let (p, r) = with_margin(0.0);
        assert!((dpo_loss(&batch, &p, &r, 1.0).unwrap().loss - LN2).abs() < 1e-15);

        let batch = [PreferenceExample::soft(0, 0, 1, 0.7).unwrap()];
        let (p, r) = with_margin(1.0);
        let got = dpo_loss(&batch, &p, &r, 1.0).unwrap().loss;
        let expected = 0.7 * (1.0 + (-1.0f64).exp()).ln() + 0.3 * (1.0 + 1.0f64.exp()).ln();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.613262).abs() < 1e-6);

        let batch = [PreferenceExample::soft(0, 0, 1, 1.0).unwrap()];
        let mut last = f64::INFINITY;
        for m in [0.0, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let (p, r) = with_margin(m);
            let l = dpo_loss(&batch, &p, &r, 1.0).unwrap().loss;
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn missing_response_is_invalid_input() {
        let batch = [PreferenceExample::soft(0, 0, 7, 0.5).unwrap()];
        let (p, r) = with_margin(0.0);
        assert!(matches!(dpo_loss(&batch, &p, &r, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn dpo_pro_single_example() {
        // l_pos = 1.0, l_neg = 0.4 are imposed through the terms directly
        let spec = relaxed(0.04);
        let p_hat = spec.worst_case(0.5, Side::from_losses(1.0, 0.4)).unwrap().p_hat;
        assert!((p_hat - 0.6).abs() < 1e-15);
        assert!((p_hat * 1.0 + (1.0 - p_hat) * 0.4 - 0.76).abs() < 1e-15);

        // and through a policy: negative margin makes l_pos > l_neg
        let batch = [PreferenceExample::soft(0, 0, 1, 0.5).unwrap()];
        let (p, r) = with_margin(-0.8);
        let res = dpo_pro_loss(&batch, &p, &r, 1.0, spec).unwrap();
        let t = res.per_example[0];
        assert!((t.weight - 0.6).abs() < 1e-15);
        assert!((res.loss - (0.6 * t.l_pos + 0.4 * t.l_neg)).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_and_hard_labels_reduce_to_dpo() {
        let batch = [
            PreferenceExample::soft(0, 0, 1, 0.3).unwrap(),
            PreferenceExample::soft(0, 2, 1, 0.9).unwrap(),
            PreferenceExample::hard(0, 2, 0, HardLabel::Negative).unwrap(),
        ];
        let (p, r) = setup(vec![0.4, -1.2, 2.0]);
        let dpo = dpo_loss(&batch, &p, &r, 0.25).unwrap().loss;
        for d in [Divergence::Chi2, Divergence::Chi2Relaxed, Divergence::Kl] {
            let pro = dpo_pro_loss(&batch, &p, &r, 0.25, AmbiguitySpec::new(d, 0.0).unwrap()).unwrap();
            assert_eq!(pro.loss, dpo);
        }
        let hard = [
            PreferenceExample::hard(0, 0, 1, HardLabel::Positive).unwrap(),
            PreferenceExample::hard(0, 2, 1, HardLabel::Negative).unwrap(),
        ];
        let a = dpo_loss(&hard, &p, &r, 0.25).unwrap().loss;
        let b = dpo_pro_loss(&hard, &p, &r, 0.25, relaxed(0.7)).unwrap().loss;
        assert_eq!(a, b);
    }

    #[test]
    fn regularized_boundary_and_tie() {
        let (p, r) = setup(vec![0.4, -1.2, 2.0]);
        let boundary = [
            PreferenceExample::soft(0, 0, 1, 1.0).unwrap(),
            PreferenceExample::soft(0, 1, 2, 0.0).unwrap(),
        ];
        let a = dpo_loss(&boundary, &p, &r, 0.25).unwrap().loss;
        let b = dpo_pro_loss_regularized(&boundary, &p, &r, 0.25, relaxed(0.5)).unwrap().loss;
        assert_eq!(a, b);

        let (p, r) = setup(vec![0.0, 0.0, 1.0]);
        let tied = [PreferenceExample::soft(0, 0, 1, 0.3).unwrap()];
        let a = dpo_loss(&tied, &p, &r, 0.25).unwrap().loss;
        let b = dpo_pro_loss_regularized(&tied, &p, &r, 0.25, relaxed(0.5)).unwrap().loss;
        let c = dpo_pro_loss(&tied, &p, &r, 0.25, relaxed(0.5)).unwrap().loss;
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn tie_gradient_is_dpo_gradient() {
        let (p, r) = setup(vec![0.0, 0.0, 1.0]);
        let tied = [PreferenceExample::soft(0, 0, 1, 0.3).unwrap()];
        let g_dpo = loss_gradient(&tied, &p, &r, 0.25, &LossKind::Dpo).unwrap();
        let g_pro = loss_gradient(&tied, &p, &r, 0.25, &LossKind::DpoPro { ambiguity: relaxed(0.5) }).unwrap();
        assert_eq!(g_dpo, g_pro);
    }

    #[test]
    fn strict_chi2_rejects_boundary_soft_labels() {
        let (p, r) = setup(vec![0.4, -1.2, 2.0]);
        let batch = [PreferenceExample::soft(0, 0, 1, 1.0).unwrap()];
        let spec = AmbiguitySpec::new(Divergence::Chi2, 0.1).unwrap();
        assert!(matches!(dpo_pro_loss(&batch, &p, &r, 0.25, spec), Err(Error::Domain { .. })));
        assert!(matches!(dpo_pro_loss_regularized(&batch, &p, &r, 0.25, spec), Err(Error::Domain { .. })));
    }

    #[test]
    fn drdpo_examples() {
        let spec = |b| DrDpoSpec::new(b).unwrap();
        for b in [1e-6, 0.3, 1.0, 1e6] {
            assert!((drdpo_surrogate(&[0.8; 5], spec(b)).unwrap() - 0.8).abs() < 1e-12);
        }
        let losses = [0.1, 0.7, 2.5, 0.05, 1.3];
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        assert!((drdpo_surrogate(&losses, spec(1e6)).unwrap() - mean).abs() < 1e-4);
        assert!((drdpo_surrogate(&losses, spec(1e-6)).unwrap() - 2.5).abs() < 1e-4);
        let wide = [0.1, 0.7, 2.5, 0.05, 1000.0];
        assert!((drdpo_surrogate(&wide, spec(1e-6)).unwrap() - 1000.0).abs() < 1e-4);
        assert!(drdpo_surrogate(&wide, spec(1e6)).unwrap().is_finite());
        assert!(DrDpoSpec::new(0.0).is_err());
    }

    #[test]
    fn reference_policy_cannot_be_trained() {
        let (_, r) = setup(vec![0.0, 0.0]);
        let batch = [PreferenceExample::soft(0, 0, 1, 0.3).unwrap()];
        assert!(matches!(
            loss_gradient(&batch, &r, &r, 0.25, &LossKind::Dpo),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn sum_reduction_scales_mean() {
        let (p, r) = setup(vec![0.4, -1.2, 2.0]);
        let batch = [
            PreferenceExample::soft(0, 0, 1, 0.3).unwrap(),
            PreferenceExample::soft(0, 2, 1, 0.9).unwrap(),
        ];
        let mean = evaluate(&batch, &p, &r, 0.25, &LossKind::Dpo, EvalOptions { gradient: true, reduction: Reduction::Mean }).unwrap();
        let sum = evaluate(&batch, &p, &r, 0.25, &LossKind::Dpo, EvalOptions { gradient: true, reduction: Reduction::Sum }).unwrap();
        assert!((sum.loss - 2.0 * mean.loss).abs() < 1e-15);
        for (a, b) in sum.gradient.unwrap().iter().zip(mean.gradient.unwrap()) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn large_margins_stay_finite() {
        let (p, r) = setup(vec![4e4, -4e4, 0.0]);
        let batch = [
            PreferenceExample::soft(0, 0, 1, 0.3).unwrap(),
            PreferenceExample::soft(0, 1, 0, 0.9).unwrap(),
        ];
        for kind in [
            LossKind::Dpo,
            LossKind::DpoPro { ambiguity: relaxed(0.1) },
            LossKind::DpoPro { ambiguity: AmbiguitySpec::new(Divergence::Kl, 0.1).unwrap() },
            LossKind::DrDpo { spec: DrDpoSpec::new(1e-3).unwrap() },
        ] {
            let res = evaluate(&batch, &p, &r, 0.125, &kind, EvalOptions { gradient: true, reduction: Reduction::Mean }).unwrap();
            assert!(res.per_example.iter().all(|t| t.margin.abs() <= 1e4 + 1.0));
            assert!(res.loss.is_finite());
            assert!(res.gradient.unwrap().iter().all(|g| g.is_finite()));
        }
    }
}
