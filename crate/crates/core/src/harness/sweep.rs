use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{evaluate_policy, PolicyEvaluation};
use crate::error::{Error, Result};
use crate::losses::{DrDpoSpec, LossKind, Reduction, DEFAULT_BETA};
use crate::policy::{Architecture, PolicyParams, ReferencePolicy};
use crate::preference_data::{generate_dataset, GroundTruthTask, LabelMode, NoiseSpec};
use crate::robust_inner::{AmbiguitySpec, Divergence};
use crate::trainer::{train, Optimizer, Schedule, TrainConfig};

/// Evaluation draws use a stream distinct from dataset generation.
const EVAL_SEED_OFFSET: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub loss: LossKind,
}

impl MethodSpec {
    pub fn dpo() -> Self {
        Self {
            name: "dpo".into(),
            loss: LossKind::Dpo,
        }
    }

    pub fn drdpo(beta_prime: f64) -> Result<Self> {
        Ok(Self {
            name: "drdpo".into(),
            loss: LossKind::DrDpo {
                spec: DrDpoSpec::new(beta_prime)?,
            },
        })
    }

    pub fn dpo_pro(divergence: Divergence, rho: f64) -> Result<Self> {
        Ok(Self {
            name: format!("dpo_pro(rho={rho})"),
            loss: LossKind::DpoPro {
                ambiguity: AmbiguitySpec::new(divergence, rho)?,
            },
        })
    }

    pub fn rho(&self) -> Option<f64> {
        match self.loss {
            LossKind::DpoPro { ambiguity } | LossKind::DpoProRegularized { ambiguity } => Some(ambiguity.rho),
            _ => None,
        }
    }
}

/// Ground truth for the sweep: either a task file or a synthetic draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_prompts")]
    pub prompts: usize,
    #[serde(default = "default_responses")]
    pub responses: usize,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Weight of the task reward in the judge table; the rest is an
    /// independent reward draw.
    #[serde(default = "default_judge_correlation")]
    pub judge_correlation: f64,
}

fn default_prompts() -> usize {
    20
}
fn default_responses() -> usize {
    8
}
fn default_reward_scale() -> f64 {
    4.0
}
fn default_judge_correlation() -> f64 {
    0.7
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            path: None,
            prompts: default_prompts(),
            responses: default_responses(),
            reward_scale: default_reward_scale(),
            seed: 0,
            judge_correlation: default_judge_correlation(),
        }
    }
}

impl TaskSpec {
    pub fn build(&self) -> Result<(GroundTruthTask, Vec<Vec<f64>>)> {
        let task = match &self.path {
            Some(p) => GroundTruthTask::load(p)?,
            None => GroundTruthTask::synthetic(self.prompts, self.responses, self.reward_scale, self.seed)?,
        };
        let judge = judge_table(&task, self.judge_correlation, self.seed)?;
        Ok((task, judge))
    }
}

/// Second reward table `c R + (1 - c) U` with `U` drawn uniformly over the
/// range of `R`, used as a correlated but distinct judge.
pub fn judge_table(task: &GroundTruthTask, correlation: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&correlation) {
        return Err(Error::invalid("judge correlation must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (lo, hi) = task
        .reward_table
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    Ok(task
        .reward_table
        .iter()
        .map(|row| {
            row.iter()
                .map(|&r| correlation * r + (1.0 - correlation) * (lo + rng.random::<f64>() * (hi - lo)))
                .collect()
        })
        .collect())
}

/// Trainer settings shared by every cell; loss and seed vary per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Hidden widths of an MLP policy; empty selects the tabular policy.
    #[serde(default)]
    pub hidden: Vec<usize>,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_true() -> bool {
    true
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.05,
            optimizer: Optimizer::default(),
            shuffle: true,
            schedule: Schedule::Constant,
            max_grad_norm: None,
            hidden: Vec::new(),
        }
    }
}

impl TrainSettings {
    pub fn config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            beta: self.beta,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed,
            shuffle: self.shuffle,
            schedule: self.schedule,
            max_grad_norm: self.max_grad_norm,
            reduction: Reduction::Mean,
        }
    }

    pub fn architecture(&self, prompts: usize, responses: usize) -> Architecture {
        if self.hidden.is_empty() {
            Architecture::Tabular { prompts, responses }
        } else {
            Architecture::Mlp {
                prompts,
                responses,
                hidden: self.hidden.clone(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<MethodSpec>,
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub task: TaskSpec,
    pub dataset_size: usize,
    #[serde(default = "default_label_mode")]
    pub label_mode: LabelMode,
    #[serde(default)]
    pub train: TrainSettings,
    pub eval_size: usize,
}

fn default_label_mode() -> LabelMode {
    LabelMode::Soft
}

impl ExperimentConfig {
    /// Methods {dpo, drdpo, dpo_pro at ρ ∈ {0.008, 0.03, 0.1}} over
    /// α ∈ {0, 0.3, 0.6} and five seeds.
    pub fn noise_table() -> Self {
        let mut methods = vec![MethodSpec::dpo(), MethodSpec::drdpo(1.0).expect("valid")];
        for rho in [0.008, 0.03, 0.1] {
            methods.push(MethodSpec::dpo_pro(Divergence::Chi2, rho).expect("valid"));
        }
        Self {
            methods,
            noise_levels: vec![0.0, 0.3, 0.6],
            seeds: (0..5).collect(),
            task: TaskSpec::default(),
            dataset_size: 2000,
            label_mode: LabelMode::Soft,
            train: TrainSettings::default(),
            eval_size: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.noise_levels.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("methods, noise_levels and seeds must all be non-empty"));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.methods.len() {
            return Err(Error::invalid("method names must be unique"));
        }
        for m in &self.methods {
            m.loss.validate()?;
        }
        for &a in &self.noise_levels {
            NoiseSpec::new(a)?;
        }
        if self.dataset_size == 0 || self.eval_size == 0 {
            return Err(Error::invalid("dataset_size and eval_size must be at least 1"));
        }
        self.train.config(LossKind::Dpo, 0).validate()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub method: String,
    pub rho: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub evaluation: Option<PolicyEvaluation>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, stderr })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub rho: Option<f64>,
    pub alpha: f64,
    pub n_ok: usize,
    pub win_rate: Option<MeanStderr>,
    pub eval_reward: Option<MeanStderr>,
    pub judge_win_rate: Option<MeanStderr>,
    pub expected_reward: Option<MeanStderr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub config: Option<ExperimentConfig>,
    pub cells: Vec<CellOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn empty() -> Self {
        Self {
            config_hash: String::new(),
            config: None,
            cells: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn cell(&self, method: &str, alpha: f64, seed: u64) -> Option<&CellOutcome> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.alpha == alpha && c.seed == seed)
    }

    pub fn summary_row(&self, method: &str, alpha: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.alpha == alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub method: String,
    pub alpha: f64,
    pub seed: u64,
    pub seconds: f64,
}

/// Wall-clock measurements, kept out of the report so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTimings {
    pub total_seconds: f64,
    pub cells: Vec<CellTiming>,
}

struct CellJob<'a> {
    method: &'a MethodSpec,
    alpha: f64,
    seed: u64,
}

fn run_cell(
    config: &ExperimentConfig,
    task: &GroundTruthTask,
    judge: &[Vec<f64>],
    reference: &ReferencePolicy,
    job: &CellJob<'_>,
) -> Result<(PolicyEvaluation, f64)> {
    // same pairs for every method and noise level of a seed
    let data = generate_dataset(
        task,
        reference,
        config.dataset_size,
        NoiseSpec::new(job.alpha)?,
        config.label_mode,
        job.seed,
    )?;
    let arch = config.train.architecture(task.prompts(), task.responses());
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let init = PolicyParams::init(arch, &mut rng)?;
    let train_config = config.train.config(job.method.loss, job.seed);
    let (params, history) = train(&train_config, &data.examples, &init, reference)?;
    let final_loss = history.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    let eval = evaluate_policy(
        &params,
        reference,
        task,
        judge,
        config.eval_size,
        job.seed.wrapping_add(EVAL_SEED_OFFSET),
    )?;
    Ok((eval, final_loss))
}

/// Runs every (method, α, seed) cell. Cell failures are recorded in the
/// report; only an invalid config or task fails the whole sweep.
pub fn run_noise_sweep(config: &ExperimentConfig) -> Result<(ExperimentReport, SweepTimings)> {
    config.validate()?;
    let started = Instant::now();
    let (task, judge) = config.task.build()?;
    let reference = ReferencePolicy::uniform(task.prompts(), task.responses())?;

    let mut jobs = Vec::new();
    for method in &config.methods {
        for &alpha in &config.noise_levels {
            for &seed in &config.seeds {
                jobs.push(CellJob { method, alpha, seed });
            }
        }
    }
    let results: Vec<(CellOutcome, CellTiming)> = jobs
        .par_iter()
        .map(|job| {
            let t0 = Instant::now();
            let outcome = run_cell(config, &task, &judge, &reference, job);
            let (evaluation, final_loss, error) = match outcome {
                Ok((e, l)) => (Some(e), Some(l), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            (
                CellOutcome {
                    method: job.method.name.clone(),
                    rho: job.method.rho(),
                    alpha: job.alpha,
                    seed: job.seed,
                    evaluation,
                    final_loss,
                    error,
                },
                CellTiming {
                    method: job.method.name.clone(),
                    alpha: job.alpha,
                    seed: job.seed,
                    seconds: t0.elapsed().as_secs_f64(),
                },
            )
        })
        .collect();
    let (cells, timing_cells): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let mut summary = Vec::new();
    for method in &config.methods {
        for &alpha in &config.noise_levels {
            let ok: Vec<&PolicyEvaluation> = cells
                .iter()
                .filter(|c| c.method == method.name && c.alpha == alpha)
                .filter_map(|c| c.evaluation.as_ref())
                .collect();
            let stat = |f: fn(&PolicyEvaluation) -> f64| MeanStderr::of(&ok.iter().map(|e| f(e)).collect::<Vec<_>>());
            summary.push(SummaryRow {
                method: method.name.clone(),
                rho: method.rho(),
                alpha,
                n_ok: ok.len(),
                win_rate: stat(|e| e.win_rate),
                eval_reward: stat(|e| e.eval_reward),
                judge_win_rate: stat(|e| e.judge_win_rate),
                expected_reward: stat(|e| e.expected_reward),
            });
        }
    }

    let report = ExperimentReport {
        config_hash: config.hash(),
        config: Some(config.clone()),
        cells,
        summary,
    };
    let timings = SweepTimings {
        total_seconds: started.elapsed().as_secs_f64(),
        cells: timing_cells,
    };
    Ok((report, timings))
}
