//! Preference records, label transforms and the synthetic data generator.
//!
//! A record is `(prompt, response_a, response_b, label)` where the label is
//! either a soft probability `q` that `response_a` is preferred or a hard
//! `±1` vote. The generator draws prompts from a categorical weight vector,
//! draws two distinct responses from the reference policy, sets the
//! ground-truth preference by Bradley–Terry over a reward table, corrupts it
//! with label-flip noise and stores a label derived from the corrupted
//! probability. The ground truth is returned separately in [`HiddenTruth`]
//! and written to its own sidecar file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::policy::{sample_from_log_probs, Policy, ReferencePolicy};

/// Number of redraws of the second response before giving up on a pair.
pub const MAX_COLLISION_RETRIES: usize = 100;

/// Default vote count for [`LabelMode::Voted`].
pub const DEFAULT_VOTES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HardLabel {
    /// `c = +1`: `response_a` preferred.
    Positive,
    /// `c = -1`: `response_b` preferred.
    Negative,
}

impl HardLabel {
    pub fn from_sign(c: i64) -> Result<Self> {
        match c {
            1 => Ok(HardLabel::Positive),
            -1 => Ok(HardLabel::Negative),
            other => Err(Error::invalid(format!("hard label must be +1 or -1, got {other}"))),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            HardLabel::Positive => 1.0,
            HardLabel::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            HardLabel::Positive => HardLabel::Negative,
            HardLabel::Negative => HardLabel::Positive,
        }
    }
}

/// Probability in `[0, 1]` that `response_a` is preferred.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SoftLabel(f64);

impl SoftLabel {
    pub fn new(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(format!("soft label must lie in [0, 1], got {q}")));
        }
        Ok(Self(q))
    }

    pub fn q(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Soft(SoftLabel),
    Hard(HardLabel),
}

impl Label {
    /// Probability mass the label places on `response_a`.
    pub fn target(self) -> f64 {
        match self {
            Label::Soft(s) => s.q(),
            Label::Hard(HardLabel::Positive) => 1.0,
            Label::Hard(HardLabel::Negative) => 0.0,
        }
    }

    fn mirrored(self) -> Self {
        match self {
            Label::Soft(s) => Label::Soft(SoftLabel(1.0 - s.q())),
            Label::Hard(h) => Label::Hard(h.flipped()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExampleRecord", into = "ExampleRecord")]
pub struct PreferenceExample {
    pub prompt_id: PromptId,
    pub response_a: ResponseId,
    pub response_b: ResponseId,
    pub label: Label,
}

impl PreferenceExample {
    pub fn new(prompt: usize, response_a: usize, response_b: usize, label: Label) -> Result<Self> {
        if response_a == response_b {
            return Err(Error::invalid(format!(
                "prompt {prompt}: response_a and response_b are both {response_a}"
            )));
        }
        Ok(Self {
            prompt_id: PromptId(prompt),
            response_a: ResponseId(response_a),
            response_b: ResponseId(response_b),
            label,
        })
    }

    pub fn soft(prompt: usize, response_a: usize, response_b: usize, q: f64) -> Result<Self> {
        Self::new(prompt, response_a, response_b, Label::Soft(SoftLabel::new(q)?))
    }

    pub fn hard(prompt: usize, response_a: usize, response_b: usize, c: HardLabel) -> Result<Self> {
        Self::new(prompt, response_a, response_b, Label::Hard(c))
    }

    /// The same preference with the two responses exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            prompt_id: self.prompt_id,
            response_a: self.response_b,
            response_b: self.response_a,
            label: self.label.mirrored(),
        }
    }
}

/// Flat on-disk form of a [`PreferenceExample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExampleRecord {
    prompt_id: usize,
    response_a: usize,
    response_b: usize,
    label_kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<i64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LabelKind {
    Soft,
    Hard,
}

impl From<PreferenceExample> for ExampleRecord {
    fn from(e: PreferenceExample) -> Self {
        let (label_kind, q, c) = match e.label {
            Label::Soft(s) => (LabelKind::Soft, Some(s.q()), None),
            Label::Hard(h) => (LabelKind::Hard, None, Some(h.sign() as i64)),
        };
        Self {
            prompt_id: e.prompt_id.0,
            response_a: e.response_a.0,
            response_b: e.response_b.0,
            label_kind,
            q,
            c,
        }
    }
}

impl TryFrom<ExampleRecord> for PreferenceExample {
    type Error = Error;

    fn try_from(r: ExampleRecord) -> Result<Self> {
        let label = match (r.label_kind, r.q, r.c) {
            (LabelKind::Soft, Some(q), None) => Label::Soft(SoftLabel::new(q)?),
            (LabelKind::Hard, None, Some(c)) => Label::Hard(HardLabel::from_sign(c)?),
            (kind, _, _) => {
                return Err(Error::invalid(format!(
                    "label_kind {kind:?} requires exactly one of q (soft) or c (hard)"
                )))
            }
        };
        PreferenceExample::new(r.prompt_id, r.response_a, r.response_b, label)
    }
}

/// Ground-truth data-generating process over a finite prompt × response grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTask {
    /// Categorical prompt distribution μ.
    pub prompt_weights: Vec<f64>,
    /// `reward_table[x][y]`, the latent reward inducing the true preference.
    pub reward_table: Vec<Vec<f64>>,
    /// Responses that may be sampled for each prompt. Empty means the full
    /// response set.
    #[serde(default)]
    pub response_support: Vec<Vec<usize>>,
}

impl GroundTruthTask {
    pub fn prompts(&self) -> usize {
        self.prompt_weights.len()
    }

    pub fn responses(&self) -> usize {
        self.reward_table.first().map(Vec::len).unwrap_or(0)
    }

    pub fn reward(&self, prompt: usize, response: usize) -> f64 {
        self.reward_table[prompt][response]
    }

    pub fn support(&self, prompt: usize) -> Vec<usize> {
        match self.response_support.get(prompt) {
            Some(s) => s.clone(),
            None => (0..self.responses()).collect(),
        }
    }

    pub fn support_mask(&self, prompt: usize) -> Vec<bool> {
        let mut mask = vec![false; self.responses()];
        for y in self.support(prompt) {
            mask[y] = true;
        }
        mask
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_weights.is_empty() {
            return Err(Error::InvalidTask("no prompts".into()));
        }
        if self.prompt_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidTask("prompt weights must be finite and nonnegative".into()));
        }
        let total: f64 = self.prompt_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTask(format!("prompt weights sum to {total}, not 1")));
        }
        if self.reward_table.len() != self.prompts() {
            return Err(Error::InvalidTask("reward table needs one row per prompt".into()));
        }
        let width = self.responses();
        for (x, row) in self.reward_table.iter().enumerate() {
            if row.len() != width || row.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidTask(format!(
                    "reward row {x} must hold {width} finite values"
                )));
            }
        }
        if !self.response_support.is_empty() && self.response_support.len() != self.prompts() {
            return Err(Error::InvalidTask("response support needs one list per prompt".into()));
        }
        for x in 0..self.prompts() {
            let support = self.support(x);
            if let Some(y) = support.iter().find(|&&y| y >= width) {
                return Err(Error::InvalidTask(format!(
                    "prompt {x}: support response {y} has no reward"
                )));
            }
            let mut dedup = support.clone();
            dedup.sort_unstable();
            dedup.dedup();
            if dedup.len() < 2 {
                return Err(Error::InvalidTask(format!(
                    "prompt {x} has fewer than 2 distinct responses in its support"
                )));
            }
        }
        Ok(())
    }

    /// Random task with uniform prompt weights and rewards drawn uniformly
    /// from `[0, reward_scale]`.
    pub fn synthetic(prompts: usize, responses: usize, reward_scale: f64, seed: u64) -> Result<Self> {
        if prompts == 0 || responses < 2 {
            return Err(Error::invalid("a synthetic task needs >= 1 prompt and >= 2 responses"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reward_table = (0..prompts)
            .map(|_| (0..responses).map(|_| rng.random::<f64>() * reward_scale).collect())
            .collect();
        let w = 1.0 / prompts as f64;
        let mut prompt_weights = vec![w; prompts];
        // keep the sum within 1e-12 for awkward counts
        let drift: f64 = 1.0 - prompt_weights.iter().sum::<f64>();
        prompt_weights[0] += drift;
        let task = Self {
            prompt_weights,
            reward_table,
            response_support: Vec::new(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let task: Self = serde_json::from_str(&text)?;
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
}

impl NoiseSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("flip probability must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn none() -> Self {
        Self { alpha: 0.0 }
    }
}

/// How the stored label is derived from the noisy preference `q_α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Store `q_α` itself.
    Soft,
    /// Store one Bernoulli(`q_α`) vote.
    Hard,
    /// Store the average of `k` Bernoulli(`q_α`) votes.
    Voted(usize),
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(LabelMode::Soft),
            "hard" => Ok(LabelMode::Hard),
            "voted" => Ok(LabelMode::Voted(DEFAULT_VOTES)),
            other => match other.strip_prefix("voted:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(LabelMode::Voted(k)),
                _ => Err(Error::invalid(format!("unknown label mode {other:?}"))),
            },
        }
    }
}

/// Bradley–Terry probability that `a` is preferred: `σ(reward_a - reward_b)`.
pub fn bt_preference(reward_a: f64, reward_b: f64) -> Result<f64> {
    if !reward_a.is_finite() || !reward_b.is_finite() {
        return Err(Error::invalid("Bradley-Terry rewards must be finite"));
    }
    Ok(sigmoid(reward_a - reward_b))
}

/// Label-flip mixture `q* (1 - α) + (1 - q*) α`.
pub fn inject_flip_noise(q_star: f64, spec: NoiseSpec) -> f64 {
    q_star * (1.0 - spec.alpha) + (1.0 - q_star) * spec.alpha
}

pub fn aggregate_votes(votes: &[HardLabel]) -> Result<SoftLabel> {
    if votes.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty vote list"));
    }
    let positive = votes.iter().filter(|v| **v == HardLabel::Positive).count();
    SoftLabel::new(positive as f64 / votes.len() as f64)
}

/// Label smoothing: `+1 ↦ 1 - ε`, `-1 ↦ ε`.
pub fn smooth_binary(label: HardLabel, epsilon: f64) -> Result<SoftLabel> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 0.5), got {epsilon}")));
    }
    SoftLabel::new(match label {
        HardLabel::Positive => 1.0 - epsilon,
        HardLabel::Negative => epsilon,
    })
}

pub fn sample_label<R: Rng + ?Sized>(q: f64, rng: &mut R) -> HardLabel {
    // u in [0, 1): q = 1 always positive, q = 0 always negative
    if rng.random::<f64>() < q {
        HardLabel::Positive
    } else {
        HardLabel::Negative
    }
}

/// Ground-truth preference per generated example.
///
/// Kept apart from the training records; every read is counted so tests can
/// assert that training never touches it.
#[derive(Debug, Default)]
pub struct HiddenTruth {
    q_star: Vec<f64>,
    reads: AtomicUsize,
}

#[derive(Serialize, Deserialize)]
struct SidecarRecord {
    q_star: f64,
}

impl HiddenTruth {
    pub fn new(q_star: Vec<f64>) -> Self {
        Self {
            q_star,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.q_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_star.is_empty()
    }

    pub fn q_star(&self, index: usize) -> Option<f64> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.q_star.get(index).copied()
    }

    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let records: Vec<SidecarRecord> =
            self.q_star.iter().map(|&q_star| SidecarRecord { q_star }).collect();
        write_lines(path, &records)
    }

    pub fn read_sidecar(path: &Path) -> Result<Self> {
        let records: Vec<SidecarRecord> = read_lines(path)?;
        Ok(Self::new(records.into_iter().map(|r| r.q_star).collect()))
    }
}

#[derive(Debug)]
pub struct GeneratedDataset {
    pub examples: Vec<PreferenceExample>,
    pub hidden: HiddenTruth,
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn sample_prompt<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (x, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        acc += w;
        last = x;
        if u < acc {
            return x;
        }
    }
    last
}

/// Draws `n` labelled pairs. Example `i` uses its own random substream
/// derived from `(seed, i)`, so the output does not depend on thread count.
pub fn generate_dataset(
    task: &GroundTruthTask,
    reference: &ReferencePolicy,
    n: usize,
    noise: NoiseSpec,
    label_mode: LabelMode,
    seed: u64,
) -> Result<GeneratedDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    task.validate()?;
    NoiseSpec::new(noise.alpha)?;
    if let LabelMode::Voted(0) = label_mode {
        return Err(Error::invalid("voted label mode needs at least one vote"));
    }
    if reference.prompt_count() != task.prompts() || reference.response_count() != task.responses() {
        return Err(Error::InvalidTask(format!(
            "reference covers {}x{} but the task is {}x{}",
            reference.prompt_count(),
            reference.response_count(),
            task.prompts(),
            task.responses()
        )));
    }
    let masks: Vec<Vec<bool>> = (0..task.prompts()).map(|x| task.support_mask(x)).collect();

    let rows: Vec<(PreferenceExample, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = example_rng(seed, i);
            let x = sample_prompt(&task.prompt_weights, &mut rng);
            let lp = reference.log_probs(x)?;
            let mask = Some(masks[x].as_slice());
            let a = sample_from_log_probs(&lp, mask, &mut rng)?;
            let mut b = sample_from_log_probs(&lp, mask, &mut rng)?;
            let mut retries = 0;
            while b == a {
                if retries == MAX_COLLISION_RETRIES {
                    return Err(Error::InvalidTask(format!(
                        "prompt {x}: could not draw two distinct responses in {MAX_COLLISION_RETRIES} retries"
                    )));
                }
                b = sample_from_log_probs(&lp, mask, &mut rng)?;
                retries += 1;
            }
            let q_star = bt_preference(task.reward(x, a), task.reward(x, b))?;
            let q_alpha = inject_flip_noise(q_star, noise);
            let label = match label_mode {
                LabelMode::Soft => Label::Soft(SoftLabel::new(q_alpha)?),
                LabelMode::Hard => Label::Hard(sample_label(q_alpha, &mut rng)),
                LabelMode::Voted(k) => {
                    let votes: Vec<HardLabel> =
                        (0..k).map(|_| sample_label(q_alpha, &mut rng)).collect();
                    Label::Soft(aggregate_votes(&votes)?)
                }
            };
            Ok((PreferenceExample::new(x, a, b, label)?, q_star))
        })
        .collect::<Result<_>>()?;

    let (examples, q_star) = rows.into_iter().unzip();
    Ok(GeneratedDataset {
        examples,
        hidden: HiddenTruth::new(q_star),
    })
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[PreferenceExample]) -> Result<()> {
    write_lines(path, examples)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PreferenceExample>> {
    read_lines(path)
}

/// Sidecar path paired with a dataset file: `data.jsonl` → `data.q_star.jsonl`.
pub fn sidecar_path(dataset: &Path) -> std::path::PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.q_star.jsonl"))
}
