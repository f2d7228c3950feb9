//! Desk-scale differentiable policies over a finite prompt × response grid.
//!
//! A policy assigns every response `y` a score `s_θ(x, y)` for prompt `x`
//! and normalizes with a softmax over responses, so
//! `log π_θ(y | x) = s_θ(x, y) - logsumexp_y' s_θ(x, y')`. Two score
//! functions are provided: a free table of logits and a small tanh network
//! reading one-hot prompt and response codes.

mod gradcheck;
mod mlp;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

pub use gradcheck::{finite_diff_check, FiniteDiffOptions, FiniteDiffReport};

/// Normalization tolerance for per-prompt log-probabilities.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Read access to a conditional distribution over responses.
pub trait Policy {
    fn prompt_count(&self) -> usize;
    fn response_count(&self) -> usize;

    /// Normalized log-probabilities of every response for `prompt`.
    fn log_probs(&self, prompt: usize) -> Result<Vec<f64>>;

    fn log_prob(&self, prompt: usize, response: usize) -> Result<f64> {
        check_response(response, self.response_count())?;
        Ok(self.log_probs(prompt)?[response])
    }

    fn num_params(&self) -> usize {
        0
    }

    /// Adds `scale * ∇_θ log π(response | prompt)` into `out`.
    fn accumulate_grad_log_prob(
        &self,
        _prompt: usize,
        _response: usize,
        _scale: f64,
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported(
            "policy does not expose parameter gradients".into(),
        ))
    }

    fn grad_log_prob(&self, prompt: usize, response: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_params()];
        self.accumulate_grad_log_prob(prompt, response, 1.0, &mut out)?;
        Ok(out)
    }
}

fn check_prompt(prompt: usize, count: usize) -> Result<()> {
    if prompt >= count {
        return Err(Error::invalid(format!(
            "prompt {prompt} out of support (0..{count})"
        )));
    }
    Ok(())
}

fn check_response(response: usize, count: usize) -> Result<()> {
    if response >= count {
        return Err(Error::invalid(format!(
            "response {response} out of support (0..{count})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// One free logit per `(prompt, response)`, stored row-major by prompt.
    Tabular { prompts: usize, responses: usize },
    /// Feed-forward tanh scorer over the concatenated one-hot codes of
    /// prompt and response, with the given hidden widths and a scalar output.
    Mlp {
        prompts: usize,
        responses: usize,
        hidden: Vec<usize>,
    },
}

impl Architecture {
    pub fn prompts(&self) -> usize {
        match self {
            Architecture::Tabular { prompts, .. } | Architecture::Mlp { prompts, .. } => *prompts,
        }
    }

    pub fn responses(&self) -> usize {
        match self {
            Architecture::Tabular { responses, .. } | Architecture::Mlp { responses, .. } => {
                *responses
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Architecture::Tabular { prompts, responses } => prompts * responses,
            Architecture::Mlp { .. } => mlp::layer_shapes(self)
                .iter()
                .map(|&(i, o)| i * o + o)
                .sum(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Architecture::Tabular { prompts, responses } => {
                format!("tabular({prompts}x{responses})")
            }
            Architecture::Mlp {
                prompts,
                responses,
                hidden,
            } => format!("mlp({prompts}x{responses}, hidden {hidden:?})"),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.prompts() == 0 || self.responses() == 0 {
            return Err(Error::invalid("architecture needs at least one prompt and one response"));
        }
        if let Architecture::Mlp { hidden, .. } = self {
            if hidden.contains(&0) {
                return Err(Error::invalid("mlp hidden widths must be positive"));
            }
        }
        Ok(())
    }
}

/// Trainable parameters θ together with the architecture that reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub architecture: Architecture,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(architecture: Architecture, theta: Vec<f64>) -> Result<Self> {
        architecture.validate()?;
        if theta.len() != architecture.num_params() {
            return Err(Error::invalid(format!(
                "{} expects {} parameters, got {}",
                architecture.describe(),
                architecture.num_params(),
                theta.len()
            )));
        }
        if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(Self {
            architecture,
            theta,
        })
    }

    pub fn zeros(architecture: Architecture) -> Result<Self> {
        let n = architecture.num_params();
        Self::new(architecture, vec![0.0; n])
    }

    /// Default initialization: zeros for the table (so the policy starts at
    /// the uniform reference), uniform in `[-0.01, 0.01]` for the network.
    pub fn init<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<Self> {
        match architecture {
            Architecture::Tabular { .. } => Self::zeros(architecture),
            Architecture::Mlp { .. } => {
                let theta = (0..architecture.num_params())
                    .map(|_| rng.random_range(-0.01..=0.01))
                    .collect();
                Self::new(architecture, theta)
            }
        }
    }

    pub fn tabular(prompts: usize, responses: usize, logits: Vec<f64>) -> Result<Self> {
        Self::new(Architecture::Tabular { prompts, responses }, logits)
    }

    /// Unnormalized scores of every response for `prompt`.
    pub fn scores(&self, prompt: usize) -> Result<Vec<f64>> {
        check_prompt(prompt, self.architecture.prompts())?;
        Ok(match &self.architecture {
            Architecture::Tabular { responses, .. } => {
                self.theta[prompt * responses..(prompt + 1) * responses].to_vec()
            }
            Architecture::Mlp { responses, .. } => (0..*responses)
                .map(|y| mlp::forward(&self.architecture, &self.theta, prompt, y).score)
                .collect(),
        })
    }
}

impl Policy for PolicyParams {
    fn prompt_count(&self) -> usize {
        self.architecture.prompts()
    }

    fn response_count(&self) -> usize {
        self.architecture.responses()
    }

    fn log_probs(&self, prompt: usize) -> Result<Vec<f64>> {
        let scores = self.scores(prompt)?;
        let lse = log_sum_exp(&scores);
        Ok(scores.into_iter().map(|s| s - lse).collect())
    }

    fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn accumulate_grad_log_prob(
        &self,
        prompt: usize,
        response: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        check_response(response, self.response_count())?;
        if out.len() != self.theta.len() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        let probs: Vec<f64> = self.log_probs(prompt)?.into_iter().map(f64::exp).collect();
        match &self.architecture {
            Architecture::Tabular { responses, .. } => {
                let row = &mut out[prompt * responses..(prompt + 1) * responses];
                for (y, (slot, p)) in row.iter_mut().zip(&probs).enumerate() {
                    let indicator = if y == response { 1.0 } else { 0.0 };
                    *slot += scale * (indicator - p);
                }
            }
            Architecture::Mlp { .. } => {
                for (y, p) in probs.iter().enumerate() {
                    let indicator = if y == response { 1.0 } else { 0.0 };
                    let w = scale * (indicator - p);
                    if w != 0.0 {
                        mlp::accumulate_score_grad(&self.architecture, &self.theta, prompt, y, w, out);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Frozen reference distribution, stored as an explicit log-probability
/// table. There is no mutable access after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    log_probs: Vec<Vec<f64>>,
}

impl ReferencePolicy {
    pub fn uniform(prompts: usize, responses: usize) -> Result<Self> {
        if prompts == 0 || responses == 0 {
            return Err(Error::invalid("reference needs at least one prompt and one response"));
        }
        let lp = -(responses as f64).ln();
        Ok(Self {
            log_probs: vec![vec![lp; responses]; prompts],
        })
    }

    pub fn from_policy(policy: &dyn Policy) -> Result<Self> {
        let table = (0..policy.prompt_count())
            .map(|x| policy.log_probs(x))
            .collect::<Result<Vec<_>>>()?;
        Self::from_table(table)
    }

    pub fn from_table(log_probs: Vec<Vec<f64>>) -> Result<Self> {
        let width = log_probs.first().map(Vec::len).unwrap_or(0);
        if width == 0 {
            return Err(Error::invalid("reference table is empty"));
        }
        for (x, row) in log_probs.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!("reference row {x} has the wrong width")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("reference row {x} has non-finite entries")));
            }
            let lse = log_sum_exp(row);
            if lse.abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::invalid(format!(
                    "reference row {x} is not normalized (logsumexp = {lse})"
                )));
            }
        }
        Ok(Self { log_probs })
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.log_probs
    }

    /// SHA-256 over the exact bit patterns of the table.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for row in &self.log_probs {
            hasher.update((row.len() as u64).to_le_bytes());
            for v in row {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

impl Policy for ReferencePolicy {
    fn prompt_count(&self) -> usize {
        self.log_probs.len()
    }

    fn response_count(&self) -> usize {
        self.log_probs[0].len()
    }

    fn log_probs(&self, prompt: usize) -> Result<Vec<f64>> {
        check_prompt(prompt, self.prompt_count())?;
        Ok(self.log_probs[prompt].clone())
    }

    fn log_prob(&self, prompt: usize, response: usize) -> Result<f64> {
        check_prompt(prompt, self.prompt_count())?;
        check_response(response, self.response_count())?;
        Ok(self.log_probs[prompt][response])
    }
}

/// β-scaled difference of policy-versus-reference log-ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub m: f64,
    pub beta: f64,
}

impl Margin {
    pub fn new(m: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        if !m.is_finite() {
            return Err(Error::invalid("margin is not finite"));
        }
        Ok(Self { m, beta })
    }
}

pub fn margin(
    policy: &dyn Policy,
    reference: &dyn Policy,
    prompt: usize,
    response_a: usize,
    response_b: usize,
    beta: f64,
) -> Result<Margin> {
    let ratio_a = policy.log_prob(prompt, response_a)? - reference.log_prob(prompt, response_a)?;
    let ratio_b = policy.log_prob(prompt, response_b)? - reference.log_prob(prompt, response_b)?;
    Margin::new(beta * (ratio_a - ratio_b), beta)
}

/// Inverse-CDF draw from a normalized log-probability row. Entries whose
/// `mask` is false are excluded and the rest renormalized.
pub fn sample_from_log_probs<R: Rng + ?Sized>(
    log_probs: &[f64],
    mask: Option<&[bool]>,
    rng: &mut R,
) -> Result<usize> {
    let allowed = |y: usize| mask.is_none_or(|m| m.get(y).copied().unwrap_or(false));
    let total: f64 = log_probs
        .iter()
        .enumerate()
        .filter(|(y, _)| allowed(*y))
        .map(|(_, lp)| lp.exp())
        .sum();
    if !(total > 0.0) {
        return Err(Error::invalid("no response has positive probability"));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (y, lp) in log_probs.iter().enumerate() {
        if !allowed(y) {
            continue;
        }
        acc += lp.exp();
        last = Some(y);
        if u < acc {
            return Ok(y);
        }
    }
    Ok(last.expect("total > 0 implies an allowed response"))
}

pub fn sample_response<R: Rng + ?Sized>(
    policy: &dyn Policy,
    prompt: usize,
    rng: &mut R,
) -> Result<usize> {
    sample_from_log_probs(&policy.log_probs(prompt)?, None, rng)
}
