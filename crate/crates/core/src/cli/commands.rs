use std::path::PathBuf;

use clap::Args;
use dpo_pro::harness::{
    coefficient_curve, emit_report, evaluate_policy, judge_table, render_table, run_noise_sweep, ExperimentConfig,
    DEFAULT_CURVE_RHOS,
};
use dpo_pro::losses::{DrDpoSpec, LossKind, DEFAULT_BETA, DEFAULT_BETA_PRIME};
use dpo_pro::policy::{Architecture, PolicyParams, ReferencePolicy};
use dpo_pro::preference_data::{
    generate_dataset, read_jsonl, sidecar_path, write_jsonl, GroundTruthTask, LabelMode, NoiseSpec, PreferenceExample,
};
use dpo_pro::robust_inner::{AmbiguitySpec, Divergence};
use dpo_pro::trainer::{atomic_write, load_checkpoint, save_checkpoint, train as run_training, Optimizer, Schedule, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{emit, parse, required, to_json, with_config, CliError, CliResult};

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenTaskArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<usize>,
    #[arg(long)]
    pub responses: Option<usize>,
    #[arg(long)]
    pub reward_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen_task(args: GenTaskArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let task = GroundTruthTask::synthetic(
        a.prompts.unwrap_or(20),
        a.responses.unwrap_or(8),
        a.reward_scale.unwrap_or(4.0),
        a.seed.unwrap_or(0),
    )?;
    let out = required(a.out, "out")?;
    atomic_write(&out, to_json(&task).as_bytes())?;
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Task JSON written by `gen-task`.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Number of examples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Label-flip probability.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// soft, hard, voted or voted:K.
    #[arg(long)]
    pub label_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSONL; the hidden truth goes to a `.truth.json` sidecar.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen(args: GenArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let task = GroundTruthTask::load(&required(a.task, "task")?)?;
    let out = required(a.out, "out")?;
    let mode: LabelMode = parse(a.label_mode.as_deref().unwrap_or("soft"), "--label-mode")?;
    let reference = ReferencePolicy::uniform(task.prompts(), task.responses())?;
    let data = generate_dataset(
        &task,
        &reference,
        required(a.n, "n")?,
        NoiseSpec::new(a.alpha.unwrap_or(0.0))?,
        mode,
        a.seed.unwrap_or(0),
    )?;
    write_jsonl(&out, &data.examples)?;
    data.hidden.write_sidecar(&sidecar_path(&out))?;
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// dpo, dpo-pro, dpo-pro-regularized or drdpo.
    #[arg(long)]
    pub loss: Option<String>,
    /// Ambiguity radius for dpo-pro.
    #[arg(long)]
    pub rho: Option<f64>,
    /// chi2, chi2-relaxed or kl.
    #[arg(long)]
    pub divergence: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// DrDPO temperature.
    #[arg(long)]
    pub beta_prime: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// sgd, momentum or adaptive.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// constant or linear-decay.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// tabular, mlp or mlp:W1,W2,...
    #[arg(long)]
    pub arch: Option<String>,
    /// Prompt count; inferred from the data when absent.
    #[arg(long)]
    pub prompts: Option<usize>,
    /// Response count; inferred from the data when absent.
    #[arg(long)]
    pub responses: Option<usize>,
    /// JSONL dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path; the run history is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn loss_kind(a: &TrainArgs) -> CliResult<LossKind> {
    let divergence: Divergence = parse(a.divergence.as_deref().unwrap_or("chi2"), "--divergence")?;
    let ambiguity = || AmbiguitySpec::new(divergence, a.rho.unwrap_or(0.1));
    Ok(match a.loss.as_deref().unwrap_or("dpo") {
        "dpo" => LossKind::Dpo,
        "dpo-pro" | "dpo_pro" => LossKind::DpoPro { ambiguity: ambiguity()? },
        "dpo-pro-regularized" | "dpo_pro_regularized" => LossKind::DpoProRegularized { ambiguity: ambiguity()? },
        "drdpo" => LossKind::DrDpo {
            spec: DrDpoSpec::new(a.beta_prime.unwrap_or(DEFAULT_BETA_PRIME))?,
        },
        other => return Err(CliError::Config(format!("unknown loss {other:?}"))),
    })
}

pub fn parse_architecture(spec: &str, prompts: usize, responses: usize) -> CliResult<Architecture> {
    match spec {
        "tabular" => Ok(Architecture::Tabular { prompts, responses }),
        "mlp" => Ok(Architecture::Mlp {
            prompts,
            responses,
            hidden: vec![16],
        }),
        other => {
            let widths = other
                .strip_prefix("mlp:")
                .ok_or_else(|| CliError::Config(format!("unknown architecture {other:?}")))?;
            let hidden = widths
                .split(',')
                .map(|w| parse::<usize>(w.trim(), "--arch width"))
                .collect::<CliResult<Vec<_>>>()?;
            Ok(Architecture::Mlp {
                prompts,
                responses,
                hidden,
            })
        }
    }
}

fn data_shape(examples: &[PreferenceExample]) -> (usize, usize) {
    examples.iter().fold((0, 0), |(p, r), e| {
        (
            p.max(e.prompt_id.0 + 1),
            r.max(e.response_a.0 + 1).max(e.response_b.0 + 1),
        )
    })
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let mut cfg = TrainConfig::new(loss_kind(&a)?);
    cfg.beta = a.beta.unwrap_or(DEFAULT_BETA);
    cfg.epochs = a.epochs.unwrap_or(10);
    cfg.learning_rate = a.lr.unwrap_or(0.05);
    cfg.batch_size = a.batch_size.unwrap_or(64);
    cfg.seed = a.seed.unwrap_or(0);
    cfg.max_grad_norm = a.max_grad_norm;
    if let Some(o) = &a.optimizer {
        cfg.optimizer = parse::<Optimizer>(o, "--optimizer")?;
    }
    cfg.schedule = match a.schedule.as_deref().unwrap_or("constant") {
        "constant" => Schedule::Constant,
        "linear-decay" | "linear_decay" => Schedule::LinearDecay,
        other => return Err(CliError::Config(format!("unknown schedule {other:?}"))),
    };
    cfg.validate()?;

    let data = read_jsonl(&required(a.data.clone(), "data")?)?;
    let out = required(a.out.clone(), "out")?;
    let (p, r) = data_shape(&data);
    let arch = parse_architecture(
        a.arch.as_deref().unwrap_or("tabular"),
        a.prompts.unwrap_or(p),
        a.responses.unwrap_or(r),
    )?;
    let reference = ReferencePolicy::uniform(arch.prompts(), arch.responses())?;
    let init = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let (params, history) = run_training(&cfg, &data, &init, &reference)?;
    save_checkpoint(&params, &out)?;
    history.write(&out.with_extension("history.csv"), &out.with_extension("history.json"))?;
    if let Some(last) = history.epochs.last() {
        eprintln!(
            "{} steps over {} epochs, final mean loss {:.6}",
            history.steps.len(),
            history.epochs.len(),
            last.mean_loss
        );
    }
    Ok(())
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Metrics JSON; printed to stdout when absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the task reward inside the judge table.
    #[arg(long)]
    pub judge_correlation: Option<f64>,
    #[arg(long)]
    pub judge_seed: Option<u64>,
}

#[derive(Serialize)]
struct EvalOutput {
    architecture: String,
    seed: u64,
    #[serde(flatten)]
    evaluation: dpo_pro::harness::PolicyEvaluation,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let params = load_checkpoint(&required(a.checkpoint, "checkpoint")?)?;
    let task = GroundTruthTask::load(&required(a.task, "task")?)?;
    let arch = &params.architecture;
    if arch.prompts() != task.prompts() || arch.responses() != task.responses() {
        return Err(CliError::Config(format!(
            "checkpoint is {} but the task is {}x{}",
            arch.describe(),
            task.prompts(),
            task.responses()
        )));
    }
    let reference = ReferencePolicy::uniform(task.prompts(), task.responses())?;
    let judge = judge_table(&task, a.judge_correlation.unwrap_or(0.7), a.judge_seed.unwrap_or(0))?;
    let seed = a.seed.unwrap_or(0);
    let evaluation = evaluate_policy(&params, &reference, &task, &judge, a.n_eval.unwrap_or(1000), seed)?;
    let out = EvalOutput {
        architecture: arch.describe(),
        seed,
        evaluation,
    };
    emit(a.metrics.as_ref(), &to_json(&out))
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment JSON; the built-in noise table when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub noise_levels: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub eval_size: Option<usize>,
    #[arg(long)]
    pub label_mode: Option<String>,
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::noise_table(),
    };
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(n) = a.noise_levels {
        cfg.noise_levels = n;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(n) = a.dataset_size {
        cfg.dataset_size = n;
    }
    if let Some(n) = a.eval_size {
        cfg.eval_size = n;
    }
    if let Some(m) = &a.label_mode {
        cfg.label_mode = parse(m, "--label-mode")?;
    }
    let (report, timings) = run_noise_sweep(&cfg)?;
    emit_report(&report, Some(&timings), &a.out_dir)?;
    print!("{}", render_table(&report));
    match report.failed_cells() {
        0 => Ok(()),
        failed => {
            for c in report.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "cell {} alpha={} seed={} failed: {}",
                    c.method,
                    c.alpha,
                    c.seed,
                    c.error.as_deref().unwrap_or("")
                );
            }
            Err(CliError::Partial {
                failed,
                total: report.cells.len(),
            })
        }
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub rho_list: Option<Vec<f64>>,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn coeff_curve(args: CurveArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let rhos = a.rho_list.unwrap_or_else(|| DEFAULT_CURVE_RHOS.to_vec());
    let curve = coefficient_curve(&rhos)?;
    emit(a.out.as_ref(), &curve.to_csv())
}
