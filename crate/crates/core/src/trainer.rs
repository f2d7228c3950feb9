//! Deterministic mini-batch training over any loss in [`crate::losses`].

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{evaluate, EvalOptions, LossKind, Reduction, DEFAULT_BETA};
use crate::policy::{Architecture, PolicyParams, ReferencePolicy};
use crate::preference_data::PreferenceExample;

/// Substream reserved for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { mu: f64 },
    Adaptive { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adaptive {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "momentum" => Ok(Optimizer::Momentum { mu: 0.9 }),
            "adaptive" | "adam" => Ok(Optimizer::default()),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear decay from the base rate to zero over the whole run.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default)]
    pub reduction: Reduction,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            beta: DEFAULT_BETA,
            epochs: 1,
            batch_size: 32,
            learning_rate: 0.05,
            optimizer: Optimizer::default(),
            seed: 0,
            shuffle: true,
            schedule: Schedule::Constant,
            max_grad_norm: None,
            reduction: Reduction::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        // zero is accepted so a run can be replayed without updates
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        match self.optimizer {
            Optimizer::Sgd => {}
            Optimizer::Momentum { mu } => {
                if !(0.0..1.0).contains(&mu) {
                    return Err(Error::invalid(format!("momentum must lie in [0, 1), got {mu}")));
                }
            }
            Optimizer::Adaptive { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::invalid("adaptive optimizer needs beta1, beta2 in [0, 1) and eps > 0"));
                }
            }
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return Err(Error::invalid(format!("max_grad_norm must be positive, got {n}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config_hash: String,
    pub batches_per_epoch: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Measured for diagnostics; not serialized so the history stays
    /// byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for s in &self.steps {
            out.push_str(&format!("{},{}\n", s.step, s.loss));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    pub fn write(&self, csv: &Path, json: &Path) -> Result<()> {
        atomic_write(csv, self.to_csv().as_bytes())?;
        atomic_write(json, self.to_json().as_bytes())
    }
}

enum OptimizerState {
    Sgd,
    Momentum { mu: f64, velocity: Vec<f64> },
    Adaptive { beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    fn new(opt: Optimizer, n: usize) -> Self {
        match opt {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Momentum { mu } => OptimizerState::Momentum {
                mu,
                velocity: vec![0.0; n],
            },
            Optimizer::Adaptive { beta1, beta2, eps } => OptimizerState::Adaptive {
                beta1,
                beta2,
                eps,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Momentum { mu, velocity } => {
                for ((p, g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    *v = *mu * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerState::Adaptive { beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..theta.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Per-epoch hook producing evaluation metrics from the current parameters.
pub type EpochMonitor<'a> = dyn FnMut(usize, &PolicyParams) -> Result<BTreeMap<String, f64>> + 'a;

pub fn train(
    config: &TrainConfig,
    dataset: &[PreferenceExample],
    initial: &PolicyParams,
    reference: &ReferencePolicy,
) -> Result<(PolicyParams, RunHistory)> {
    train_with_monitor(config, dataset, initial, reference, &mut |_, _| Ok(BTreeMap::new()))
}

pub fn train_with_monitor(
    config: &TrainConfig,
    dataset: &[PreferenceExample],
    initial: &PolicyParams,
    reference: &ReferencePolicy,
    monitor: &mut EpochMonitor<'_>,
) -> Result<(PolicyParams, RunHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let started = Instant::now();
    let mut params = initial.clone();
    let n_params = params.theta.len();
    let mut state = OptimizerState::new(config.optimizer, n_params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let opts = EvalOptions {
        gradient: true,
        reduction: config.reduction,
    };
    let mut history = RunHistory {
        config_hash: config.hash(),
        batches_per_epoch,
        steps: Vec::with_capacity(total_steps),
        epochs: Vec::with_capacity(config.epochs),
        wall_clock_secs: 0.0,
    };
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i]));
            let result = evaluate(&batch, &params, reference, config.beta, &config.loss, opts)?;
            if !result.loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    epoch,
                    batch: b,
                });
            }
            let mut grad = result.gradient.expect("gradient requested");
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: b,
                });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if let Some(max) = config.max_grad_norm {
                if norm > max {
                    let s = max / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            let step = history.steps.len();
            let lr = match config.schedule {
                Schedule::Constant => config.learning_rate,
                Schedule::LinearDecay => config.learning_rate * (1.0 - step as f64 / total_steps as f64),
            };
            if lr != 0.0 {
                state.step(&mut params.theta, &grad, lr);
            }
            if params.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameters",
                    epoch,
                    batch: b,
                });
            }
            epoch_loss += result.loss;
            history.steps.push(StepRecord {
                step,
                epoch,
                batch: b,
                loss: result.loss,
                grad_norm: norm,
            });
        }
        let metrics = monitor(epoch, &params)?;
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / batches_per_epoch as f64,
            metrics,
        });
    }
    history.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((params, history))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(params)?;
    atomic_write(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: PolicyParams = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    })?;
    PolicyParams::new(raw.architecture, raw.theta).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
        line: 0,
        column: 0,
    })
}

/// Loads a checkpoint and checks it was produced for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &Architecture) -> Result<PolicyParams> {
    let params = load_checkpoint(path)?;
    if &params.architecture != expected {
        return Err(Error::ArchitectureMismatch {
            expected: expected.describe(),
            found: params.architecture.describe(),
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{dpo_loss, DrDpoSpec};
    use crate::policy::margin;
    use crate::robust_inner::{AmbiguitySpec, Divergence};
    use rand::Rng;

    fn toy_data() -> Vec<PreferenceExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..40)
            .map(|i| {
                let a = rng.random_range(0..4);
                let b = (a + 1 + rng.random_range(0..3)) % 4;
                PreferenceExample::soft(i % 3, a, b, rng.random_range(0.05..0.95)).unwrap()
            })
            .collect()
    }

    fn tabular(p: usize, r: usize) -> (PolicyParams, ReferencePolicy) {
        (
            PolicyParams::zeros(Architecture::Tabular { prompts: p, responses: r }).unwrap(),
            ReferencePolicy::uniform(p, r).unwrap(),
        )
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (init, reference) = tabular(3, 4);
        let mut config = TrainConfig::new(LossKind::Dpo);
        config.learning_rate = 0.0;
        config.epochs = 2;
        let (out, history) = train(&config, &toy_data(), &init, &reference).unwrap();
        assert_eq!(out, init);
        assert_eq!(history.steps.len(), 2 * history.batches_per_epoch);
    }

    #[test]
    fn confident_example_grows_margin_monotonically() {
        let (init, reference) = tabular(1, 2);
        let data = [PreferenceExample::soft(0, 0, 1, 1.0).unwrap()];
        let mut config = TrainConfig::new(LossKind::Dpo);
        config.optimizer = Optimizer::Sgd;
        config.learning_rate = 0.5;
        config.batch_size = 1;
        let mut params = init;
        let mut last = margin(&params, &reference, 0, 0, 1, 0.25).unwrap().m;
        for _ in 0..50 {
            params = train(&config, &data, &params, &reference).unwrap().0;
            let m = margin(&params, &reference, 0, 0, 1, 0.25).unwrap().m;
            assert!(m > last);
            last = m;
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let (init, reference) = tabular(3, 4);
        let mut config = TrainConfig::new(LossKind::DrDpo { spec: DrDpoSpec::default() });
        config.batch_size = 7;
        config.epochs = 3;
        config.seed = 11;
        let (p1, h1) = train(&config, &toy_data(), &init, &reference).unwrap();
        let (p2, h2) = train(&config, &toy_data(), &init, &reference).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1.to_json(), h2.to_json());
        assert_eq!(h1.to_csv(), h2.to_csv());
    }

    #[test]
    fn full_batch_sgd_decreases_dpo_loss() {
        let (init, reference) = tabular(3, 4);
        let data = toy_data();
        let mut config = TrainConfig::new(LossKind::Dpo);
        config.optimizer = Optimizer::Sgd;
        config.learning_rate = 1e-3;
        config.batch_size = data.len();
        config.shuffle = false;
        let mut params = init;
        let mut last = dpo_loss(&data, &params, &reference, config.beta).unwrap().loss;
        for _ in 0..20 {
            params = train(&config, &data, &params, &reference).unwrap().0;
            let l = dpo_loss(&data, &params, &reference, config.beta).unwrap().loss;
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn zero_radius_training_matches_dpo() {
        let (init, reference) = tabular(3, 4);
        let mut dpo = TrainConfig::new(LossKind::Dpo);
        dpo.epochs = 3;
        dpo.batch_size = 8;
        let mut pro = dpo.clone();
        pro.loss = LossKind::DpoPro {
            ambiguity: AmbiguitySpec::new(Divergence::Chi2, 0.0).unwrap(),
        };
        let a = train(&dpo, &toy_data(), &init, &reference).unwrap().0;
        let b = train(&pro, &toy_data(), &init, &reference).unwrap().0;
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn reference_is_untouched() {
        let (init, reference) = tabular(3, 4);
        let before = reference.fingerprint();
        let config = TrainConfig::new(LossKind::DpoPro {
            ambiguity: AmbiguitySpec::new(Divergence::Chi2Relaxed, 0.3).unwrap(),
        });
        train(&config, &toy_data(), &init, &reference).unwrap();
        assert_eq!(before, reference.fingerprint());
    }

    #[test]
    fn non_finite_loss_names_the_batch() {
        let (_, reference) = tabular(3, 4);
        let row = [1e308, -1e308, 1e308, -1e308];
        let init = PolicyParams::tabular(3, 4, row.repeat(3)).unwrap();
        let config = TrainConfig::new(LossKind::Dpo);
        let err = train(&config, &toy_data(), &init, &reference).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        assert!(err.to_string().contains("batch"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (init, reference) = tabular(3, 4);
        let mut config = TrainConfig::new(LossKind::Dpo);
        config.epochs = 0;
        assert!(train(&config, &toy_data(), &init, &reference).is_err());
        let config = TrainConfig::new(LossKind::Dpo);
        assert!(train(&config, &[], &init, &reference).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = Architecture::Mlp { prompts: 2, responses: 3, hidden: vec![4] };
        let mut params = PolicyParams::init(arch.clone(), &mut rng).unwrap();
        params.theta.iter_mut().for_each(|t| *t *= std::f64::consts::PI * 1e3);
        save_checkpoint(&params, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        assert!(back.theta.iter().zip(&params.theta).all(|(a, b)| a.to_bits() == b.to_bits()));

        let tab = Architecture::Tabular { prompts: 2, responses: 3 };
        assert!(matches!(load_checkpoint_for(&path, &tab), Err(Error::ArchitectureMismatch { .. })));
        assert!(load_checkpoint_for(&path, &arch).is_ok());

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint { line, .. }) => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
