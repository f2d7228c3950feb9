use std::path::PathBuf;

use clap::{Args, Subcommand};
use dpo_pro::preference_data::write_jsonl;
use dpo_pro::rmab::{
    build_preference_dataset, count_preference_examples, gen_instance, generate_candidates, generate_commands, simulate,
    synthetic_judge, InstanceSpec, PrefBuildConfig, PrioritySpec, RewardExpr, RmabInstance, WhittlePolicy,
    DEFAULT_WHITTLE_TOLERANCE,
};
use dpo_pro::trainer::atomic_write;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{emit, required, to_json, with_config, CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum RmabCommand {
    /// Sample a synthetic instance.
    GenInstance(GenInstanceArgs),
    /// Whittle index of every arm in both states.
    Whittle(InstanceArgs),
    /// Simulate the top-K Whittle policy.
    Simulate(InstanceArgs),
    /// Judge two reward expressions by their simulated trajectories.
    Judge(JudgeArgs),
    /// Commands × candidates × judged pairs as a preference dataset.
    BuildPrefs(BuildPrefsArgs),
}

pub fn run(c: RmabCommand) -> CliResult<()> {
    match c {
        RmabCommand::GenInstance(a) => gen(a),
        RmabCommand::Whittle(a) => whittle(a),
        RmabCommand::Simulate(a) => simulate_cmd(a),
        RmabCommand::Judge(a) => judge(a),
        RmabCommand::BuildPrefs(a) => build_prefs(a),
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenInstanceArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arms: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Reward expression, for example `s * (1 + 2 * oldest_age)`.
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn gen(args: GenInstanceArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let reward: RewardExpr = a.reward.as_deref().unwrap_or("s").parse().map_err(dpo_pro::Error::from)?;
    let inst = gen_instance(&InstanceSpec {
        arms: a.arms.unwrap_or(10),
        budget: a.budget.unwrap_or(2),
        gamma: a.gamma.unwrap_or(0.9),
        horizon: a.horizon.unwrap_or(20),
        reward,
        seed: a.seed.unwrap_or(0),
    })?;
    let mut json = inst.to_json();
    json.push('\n');
    emit(a.out.as_ref(), &json)
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Replaces the instance's reward expression.
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_instance(path: Option<PathBuf>, reward: Option<&str>) -> CliResult<RmabInstance> {
    let inst = RmabInstance::load(&required(path, "instance")?)?;
    Ok(match reward {
        Some(r) => inst.with_reward(r.parse::<RewardExpr>().map_err(dpo_pro::Error::from)?),
        None => inst,
    })
}

fn whittle(args: InstanceArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let inst = load_instance(a.instance, a.reward.as_deref())?;
    let policy = WhittlePolicy::new(&inst, a.tolerance.unwrap_or(DEFAULT_WHITTLE_TOLERANCE))?;
    emit(a.out.as_ref(), &to_json(&policy))
}

fn simulate_cmd(args: InstanceArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let inst = load_instance(a.instance, a.reward.as_deref())?;
    let policy = WhittlePolicy::new(&inst, a.tolerance.unwrap_or(DEFAULT_WHITTLE_TOLERANCE))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.unwrap_or(0));
    let sim = simulate(&inst, &policy, &mut rng)?;
    emit(a.out.as_ref(), &to_json(&sim))
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// First reward expression.
    #[arg(long)]
    pub a: Option<String>,
    /// Second reward expression.
    #[arg(long)]
    pub b: Option<String>,
    /// Priority JSON (`description`, `weights`); uniform when absent.
    #[arg(long)]
    pub command: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct JudgeOutput {
    q: f64,
    score_a: f64,
    score_b: f64,
}

fn judge(args: JudgeArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let inst = load_instance(a.instance, None)?;
    let priority = match &a.command {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let spec: PrioritySpec =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            spec.validate()?;
            spec
        }
        None => PrioritySpec::uniform(),
    };
    let tol = a.tolerance.unwrap_or(DEFAULT_WHITTLE_TOLERANCE);
    let seed = a.seed.unwrap_or(0);
    // both candidates see the same random stream
    let stats = |expr: &str| -> CliResult<_> {
        let inst = inst.with_reward(expr.parse::<RewardExpr>().map_err(dpo_pro::Error::from)?);
        let policy = WhittlePolicy::new(&inst, tol)?;
        Ok(simulate(&inst, &policy, &mut ChaCha8Rng::seed_from_u64(seed))?.stats)
    };
    let sa = stats(&required(a.a, "a")?)?;
    let sb = stats(&required(a.b, "b")?)?;
    let q = synthetic_judge(&sa, &sb, &priority, a.temperature.unwrap_or(5.0))?;
    let out = JudgeOutput {
        q: q.q(),
        score_a: priority.score(&sa)?,
        score_b: priority.score(&sb)?,
    };
    emit(a.out.as_ref(), &to_json(&out))
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildPrefsArgs {
    /// JSON file of defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Number of generated prioritization commands.
    #[arg(long)]
    pub commands: Option<usize>,
    /// Candidate rewards per command.
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Judged pairs per command.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Judge votes per pair; 0 stores the judge probability.
    #[arg(long)]
    pub votes: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSONL dataset output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Commands, candidate expressions and trajectory statistics as JSON.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Print the example count without simulating.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dry_run: Option<bool>,
}

#[derive(Serialize)]
struct BuildMeta<'a> {
    commands: &'a [PrioritySpec],
    candidates: Vec<Vec<String>>,
    stats: &'a [Vec<dpo_pro::rmab::TrajectoryStats>],
}

fn build_prefs(args: BuildPrefsArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = with_config(args, config.as_deref())?;
    let n_commands = a.commands.unwrap_or(5);
    let n_candidates = a.candidates.unwrap_or(6);
    let defaults = PrefBuildConfig::default();
    let pairs = a.pairs.unwrap_or(defaults.pairs_per_command);
    if a.dry_run.unwrap_or(false) {
        let n = count_preference_examples(n_commands, n_candidates, pairs)?;
        println!("{n}");
        return Ok(());
    }
    let inst = load_instance(a.instance, None)?;
    let out = required(a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let commands = generate_commands(n_commands, seed);
    let candidates: Vec<Vec<RewardExpr>> = commands
        .iter()
        .enumerate()
        .map(|(i, c)| generate_candidates(c, n_candidates, seed.wrapping_add(1 + i as u64)))
        .collect();
    let cfg = PrefBuildConfig {
        pairs_per_command: pairs,
        votes: a.votes.unwrap_or(defaults.votes),
        temperature: a.temperature.unwrap_or(defaults.temperature),
        whittle_tolerance: defaults.whittle_tolerance,
        seed,
    };
    let build = build_preference_dataset(&commands, &candidates, &inst, &cfg)?;
    write_jsonl(&out, &build.examples)?;
    if let Some(meta) = &a.meta {
        let m = BuildMeta {
            commands: &commands,
            candidates: candidates.iter().map(|l| l.iter().map(|e| e.to_string()).collect()).collect(),
            stats: &build.stats,
        };
        atomic_write(meta, to_json(&m).as_bytes())?;
    }
    Ok(())
}
