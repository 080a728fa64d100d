use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use reward_compat::bench::{self, ExperimentConfig};
use reward_compat::compat::{self, CompatibilityReport, SuboptimalityBand};
use reward_compat::instances;
use reward_compat::io;
use reward_compat::mdp::{Policy, RewardFunction};
use reward_compat::offline::OfflineModel;
use reward_compat::online::{
    caty_online, explore, ClassificationConfig, ExplorationConfig, SimulatedEnv, Strategy,
};
use reward_compat::par::{configure_threads, Execution};
use reward_compat::sampling::sample_trajectories;
use reward_compat::solve::{backward_induction, occupancy_measure};
use reward_compat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "reward-compat",
    version,
    about = "Reward compatibility oracles and classifiers for tabular IRL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact compatibility of each reward on a known MDP.
    Oracle(OracleArgs),
    /// Explore a simulated MDP, then classify rewards against expert data.
    Online(OnlineArgs),
    /// Classify rewards from expert and behavioural datasets.
    Offline(OfflineArgs),
    /// Write instance files (MDP, policies, rewards).
    Gen(GenArgs),
    /// Sample a trajectory dataset from an MDP and a policy.
    Sample(SampleArgs),
    /// Run a seeded experiment from a JSON config.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    Optimal,
    Suboptimal,
    BestWorst,
    Multiplicative,
    Entropy,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Random,
    Muffin,
    LowerBound,
    Offline,
}

#[derive(Args)]
struct Output {
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Expert policy JSON.
    #[arg(long)]
    expert: PathBuf,
    #[arg(long)]
    rewards: PathBuf,
    #[arg(long, value_enum, default_value = "optimal")]
    mode: OracleMode,
    #[arg(long, num_args = 2, value_names = ["L", "U"], allow_negative_numbers = true)]
    band: Option<Vec<f64>>,
    /// best-worst mode: coverage is the support of this policy.
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct OnlineArgs {
    /// Simulator for exploration; the learner only sees rollouts.
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    expert_data: PathBuf,
    #[arg(long)]
    rewards: PathBuf,
    #[arg(long, default_value = "rf-express")]
    strategy: Strategy,
    /// Exploration episodes.
    #[arg(long)]
    tau: usize,
    #[arg(long)]
    threshold: f64,
    /// Defaults to the threshold.
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["L", "U"], allow_negative_numbers = true)]
    band: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct OfflineArgs {
    /// Only used to report the true optimal value alongside the estimates.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    expert_data: PathBuf,
    #[arg(long)]
    behavior_data: PathBuf,
    #[arg(long)]
    rewards: PathBuf,
    #[arg(long)]
    threshold: f64,
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long = "eta-b", allow_negative_numbers = true)]
    eta_best: Option<f64>,
    #[arg(long = "eta-w", allow_negative_numbers = true)]
    eta_worst: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["L", "U"], allow_negative_numbers = true)]
    band: Option<Vec<f64>>,
    /// Split the behavioural data into per-stage blocks.
    #[arg(long)]
    single_reward: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 4)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    min_prob: Option<f64>,
    /// Random kind: number of random rewards to write.
    #[arg(long = "num-rewards", default_value_t = 16)]
    num_rewards: usize,
    /// Offline kind: transition probability of the hidden action.
    #[arg(long, default_value_t = 0.5)]
    q: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    policy_id: Option<String>,
    #[arg(long)]
    mdp_id: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run trials on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

fn parse_band(band: &Option<Vec<f64>>) -> Result<Option<SuboptimalityBand>> {
    band.as_ref()
        .map(|v| SuboptimalityBand::new(v[0], v[1]))
        .transpose()
}

fn emit<T: Serialize>(output: &Output, rows: &[T]) -> Result<()> {
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(rows)? + "\n",
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
                .expect("utf-8")
        }
    };
    match &output.out {
        Some(path) => io::write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct OracleRow {
    reward_id: String,
    mode: &'static str,
    #[serde(rename = "C")]
    value: f64,
    #[serde(rename = "C_best")]
    best: Option<f64>,
    #[serde(rename = "C_worst")]
    worst: Option<f64>,
    #[serde(rename = "J_expert")]
    j_expert: Option<f64>,
    #[serde(rename = "J_opt")]
    j_opt: Option<f64>,
    #[serde(rename = "J_opt_min")]
    j_opt_min: Option<f64>,
    #[serde(rename = "J_opt_max")]
    j_opt_max: Option<f64>,
    delta_m: Option<f64>,
    #[serde(rename = "delta_M")]
    delta_big_m: Option<f64>,
}

impl OracleRow {
    fn from_report(reward_id: String, mode: &'static str, r: &CompatibilityReport) -> Self {
        Self {
            reward_id,
            mode,
            value: r.value,
            best: r.best,
            worst: r.worst,
            j_expert: Some(r.j_expert),
            j_opt: r.j_opt,
            j_opt_min: r.j_opt_min,
            j_opt_max: r.j_opt_max,
            delta_m: r.delta_m,
            delta_big_m: r.delta_big_m,
        }
    }
}

fn labelled(rewards: &[RewardFunction]) -> impl Iterator<Item = (String, &RewardFunction)> {
    rewards.iter().enumerate().map(|(i, r)| (r.label(i), r))
}

fn run_oracle(args: &OracleArgs) -> Result<()> {
    let mdp = io::read_mdp(&args.mdp)?;
    let expert = io::read_policy(&args.expert)?;
    let rewards = io::read_rewards(&args.rewards)?;
    let band = parse_band(&args.band)?;
    let coverage = match (args.mode, &args.behavior) {
        (OracleMode::BestWorst, Some(path)) => {
            Some(occupancy_measure(&mdp, &io::read_policy(path)?)?.support)
        }
        (OracleMode::BestWorst, None) => {
            return Err(Error::ConfigInvalid(
                "best-worst mode needs --behavior".into(),
            ));
        }
        _ => None,
    };
    let mut rows = Vec::with_capacity(rewards.len());
    for (id, r) in labelled(&rewards) {
        let row = match args.mode {
            OracleMode::Optimal => {
                OracleRow::from_report(id, "optimal", &compat::compatibility_opt(&mdp, &expert, r)?)
            }
            OracleMode::Suboptimal => {
                let band = band
                    .ok_or_else(|| Error::ConfigInvalid("suboptimal mode needs --band".into()))?;
                OracleRow::from_report(
                    id,
                    "suboptimal",
                    &compat::compatibility_subopt(&mdp, &expert, r, band)?,
                )
            }
            OracleMode::BestWorst => {
                let z = coverage.as_ref().expect("checked above");
                OracleRow::from_report(
                    id,
                    "offline-best-worst",
                    &compat::best_worst_compat(&mdp, &expert, r, z, band)?,
                )
            }
            OracleMode::Multiplicative => OracleRow {
                reward_id: id,
                mode: "multiplicative",
                value: compat::multiplicative_compat(&mdp, &expert, r)?,
                best: None,
                worst: None,
                j_expert: None,
                j_opt: None,
                j_opt_min: None,
                j_opt_max: None,
                delta_m: None,
                delta_big_m: None,
            },
            OracleMode::Entropy => {
                OracleRow::from_report(id, "entropy", &compat::entropy_compat(&mdp, &expert, r)?)
            }
        };
        rows.push(row);
    }
    emit(&args.output, &rows)
}

#[derive(Serialize)]
struct OnlineRow {
    reward_id: String,
    mode: &'static str,
    #[serde(rename = "C")]
    value: f64,
    #[serde(rename = "J_expert")]
    j_expert: f64,
    #[serde(rename = "J_opt")]
    j_opt: f64,
    eta: f64,
    label: bool,
}

fn run_online(args: &OnlineArgs) -> Result<()> {
    let mdp = io::read_mdp(&args.mdp)?;
    let expert = io::read_dataset(&args.expert_data)?;
    let rewards = io::read_rewards(&args.rewards)?;
    let mut cfg = ClassificationConfig::new(args.threshold);
    cfg.band = parse_band(&args.band)?;
    if let Some(eta) = args.eta {
        cfg = cfg.with_eta(eta);
    }
    cfg.validate()?;
    let mut env = SimulatedEnv::new(&mdp, args.seed);
    let data = explore(
        &mut env,
        &ExplorationConfig::new(args.strategy, args.tau, args.seed),
        Some(&rewards),
    )?;
    let outcomes = caty_online(&data, &expert, &rewards, &cfg)?;
    let mode = if cfg.band.is_some() {
        "suboptimal"
    } else {
        "optimal"
    };
    let rows: Vec<OnlineRow> = outcomes
        .into_iter()
        .map(|o| OnlineRow {
            reward_id: o.reward_id,
            mode,
            value: o.report.value,
            j_expert: o.report.j_expert,
            j_opt: o.report.j_opt.unwrap_or(f64::NAN),
            eta: cfg.eta,
            label: o.label,
        })
        .collect();
    emit(&args.output, &rows)
}

#[derive(Serialize)]
struct OfflineRow {
    reward_id: String,
    #[serde(rename = "C_best")]
    best: f64,
    #[serde(rename = "C_worst")]
    worst: f64,
    class_best: bool,
    class_worst: bool,
    #[serde(rename = "J_expert")]
    j_expert: f64,
    #[serde(rename = "J_opt_min")]
    j_opt_min: f64,
    #[serde(rename = "J_opt_max")]
    j_opt_max: f64,
    delta_m: f64,
    #[serde(rename = "delta_M")]
    delta_big_m: f64,
    support_size: usize,
    eta_best: f64,
    eta_worst: f64,
    /// Exact `J*` when `--mdp` is given.
    #[serde(rename = "J_opt_true")]
    j_opt_true: Option<f64>,
}

fn run_offline(args: &OfflineArgs) -> Result<()> {
    let expert = io::read_dataset(&args.expert_data)?;
    let behavior = io::read_dataset(&args.behavior_data)?;
    let rewards = io::read_rewards(&args.rewards)?;
    let dim = rewards[0].dim();
    let mut cfg = ClassificationConfig::new(args.threshold);
    cfg.band = parse_band(&args.band)?;
    if let Some(eta) = args.eta {
        cfg = cfg.with_eta(eta);
    }
    cfg.eta_best = args.eta_best;
    cfg.eta_worst = args.eta_worst;
    cfg.validate()?;
    let mdp = args.mdp.as_deref().map(io::read_mdp).transpose()?;
    let model = OfflineModel::build(&behavior, dim, args.single_reward, args.seed)?;
    let mut rows = Vec::with_capacity(rewards.len());
    for (id, r) in labelled(&rewards) {
        let res = model.classify(&expert, r, &cfg)?;
        let j_opt_true = mdp
            .as_ref()
            .map(|m| backward_induction(m, r).map(|v| v.j))
            .transpose()?;
        rows.push(OfflineRow {
            reward_id: id,
            best: res.best,
            worst: res.worst,
            class_best: res.class_best,
            class_worst: res.class_worst,
            j_expert: res.j_expert,
            j_opt_min: res.j_opt_min,
            j_opt_max: res.j_opt_max,
            delta_m: res.delta_m,
            delta_big_m: res.delta_big_m,
            support_size: res.support_size,
            eta_best: res.eta_best,
            eta_worst: res.eta_worst,
            j_opt_true,
        });
    }
    emit(&args.output, &rows)
}

fn write_bundle(
    dir: &Path,
    mdp: &reward_compat::TabularMdp,
    experts: &[Policy],
    rewards: &[RewardFunction],
) -> Result<()> {
    io::write_mdp(&dir.join("mdp.json"), mdp)?;
    if experts.len() == 1 {
        io::write_policy(&dir.join("expert.json"), &experts[0])?;
    } else {
        for (k, pi) in experts.iter().enumerate() {
            io::write_policy(&dir.join(format!("expert_{k}.json")), pi)?;
        }
    }
    if !rewards.is_empty() {
        io::write_rewards(&dir.join("rewards.json"), rewards)?;
    }
    Ok(())
}

fn run_gen(args: &GenArgs) -> Result<()> {
    match args.kind {
        GenKind::Random => {
            let mdp = instances::gen_random_mdp(
                args.states,
                args.actions,
                args.horizon,
                args.seed,
                args.min_prob,
            )?;
            let expert = instances::gen_random_policy(mdp.table_dim(), args.seed)?;
            let rewards: Vec<_> = (0..args.num_rewards)
                .map(|i| {
                    let seed = reward_compat::rng::derive_seed(args.seed, &[i as u64]);
                    instances::gen_random_reward(mdp.table_dim(), seed).with_id(format!("r{i:03}"))
                })
                .collect();
            write_bundle(&args.out_dir, &mdp, &[expert], &rewards)
        }
        GenKind::Muffin => {
            let b = instances::muffin_example();
            write_bundle(&args.out_dir, &b.mdp, &b.expert_policies, &b.rewards)
        }
        GenKind::LowerBound => {
            let b = instances::build_lower_bound_family(args.states)?;
            let rewards = instances::THETA_GRID
                .iter()
                .map(|&t| {
                    Ok(instances::lower_bound_reward(args.states, t)?.with_id(format!("theta{t}")))
                })
                .collect::<Result<Vec<_>>>()?;
            write_bundle(&args.out_dir, &b.mdp, &b.expert_policies, &rewards)
        }
        GenKind::Offline => {
            let b = instances::build_offline_instance(args.q)?;
            write_bundle(&args.out_dir, &b.mdp, &b.expert_policies, &b.rewards)
        }
    }
}

fn run_sample(args: &SampleArgs) -> Result<()> {
    let mdp = io::read_mdp(&args.mdp)?;
    let pi = io::read_policy(&args.policy)?;
    let mut data = sample_trajectories(&mdp, &pi, args.n, args.seed)?;
    data.meta.policy_id = args.policy_id.clone();
    data.meta.mdp_id = args.mdp_id.clone();
    io::write_dataset(&args.out, &data)
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let out = bench::run_experiment_with(&cfg, exec)?;
    bench::write_outputs(&args.out, &out)?;
    for b in &out.summary.budgets {
        eprintln!(
            "budget ({}, {}): median sup-error {:.4}, sandwich {:.2}, misclassified {}/{}",
            b.budget_expert,
            b.budget,
            b.sup_err.median,
            b.sandwich_coverage,
            b.misclassified,
            b.eligible
        );
    }
    Ok(())
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("REWARD_COMPAT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::ConfigInvalid(format!(
                "REWARD_COMPAT_THREADS={v} is not a positive integer"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads(threads_from_env()?);
    match &cli.command {
        Command::Oracle(a) => run_oracle(a),
        Command::Online(a) => run_online(a),
        Command::Offline(a) => run_offline(a),
        Command::Gen(a) => run_gen(a),
        Command::Sample(a) => run_sample(a),
        Command::Bench(a) => run_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
