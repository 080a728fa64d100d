//! Seeded error-vs-samples experiments: run the online or offline classifier
//! on many independent trials, compare with the exact oracle and aggregate.
//!
//! `records.csv` columns, in order:
//! `trial, seed, reward_id, budget_expert, budget, c_true, c_hat, abs_err,
//! c_best_true, c_best_hat, abs_err_best, eps, eta, label, true_label,
//! label_best, true_label_best, support_size, coverage_ok, runtime_ms`.
//! Online rows leave the `*_best` and `coverage_ok` fields empty. Offline rows
//! carry the worst-case pair in `c_true`/`c_hat` and the best-case pair in the
//! `*_best` columns. `budget` is τ online and τ^b offline.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compat::{best_worst_compat, compatibility, SuboptimalityBand};
use crate::error::{Error, Result};
use crate::instances::{
    build_offline_instance, gen_random_mdp, gen_random_policy, gen_random_reward, muffin_example,
};
use crate::io::{self, RewardFile};
use crate::mdp::{CoverageSet, LinearRewardClass, Policy, RewardFunction, TabularMdp};
use crate::offline::OfflineModel;
use crate::online::{
    caty_online, explore, ClassificationConfig, ExplorationConfig, SimulatedEnv, Strategy,
};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream_rng};
use crate::sampling::sample_trajectories_with;
use crate::solve::occupancy_measure;

/// Exact oracles are refused above this many transition entries `H·S·A·S`.
pub const ORACLE_ENTRY_CAP: usize = 50_000_000;

const EXPERT_STREAM: u64 = 1;
const LEARNER_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSpec {
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
        #[serde(default)]
        min_prob: Option<f64>,
    },
    Muffin,
    Offline {
        q: f64,
    },
    Files {
        mdp: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    /// The instance's own expert (muffin and offline instances).
    Bundle,
    Random {
        seed: u64,
    },
    Uniform,
    /// Uniform over all but `masked` actions in each `(h, s)`; the removed
    /// actions are drawn from `seed`.
    MaskedUniform {
        masked: usize,
        seed: u64,
    },
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardGridSpec {
    /// The instance's canonical rewards.
    Bundle,
    Explicit {
        rewards: Vec<RewardFile>,
    },
    File {
        path: String,
    },
    /// Entries i.i.d. uniform in `[-1, 1]`.
    Random {
        count: usize,
        seed: u64,
    },
    /// `r_h(s,a) = ⟨φ(s,a), θ_h⟩` with random unit-ball features and `θ_h`
    /// uniform in the cube `[-1, 1]^d` scaled by `1/√d`.
    Linear {
        count: usize,
        dim: usize,
        seed: u64,
    },
    /// Random vertices of the reward cube `{-1, 1}^{H×S×A}`.
    Vertex {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EtaRule {
    Delta,
    DeltaPlusEps,
    DeltaMinusEps,
    Explicit { eta: f64 },
}

/// Sample sizes for one budget level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Expert trajectories τ^E.
    pub expert: usize,
    /// Exploration episodes τ (online) or behavioural trajectories τ^b (offline).
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    #[serde(default = "default_expert")]
    pub expert: PolicySpec,
    /// Offline mode only.
    #[serde(default)]
    pub behavior: Option<PolicySpec>,
    pub rewards: RewardGridSpec,
    pub budgets: Vec<Budget>,
    pub mode: Mode,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub band: Option<SuboptimalityBand>,
    pub delta: f64,
    #[serde(default = "default_eta_rule")]
    pub eta_rule: EtaRule,
    pub trials: usize,
    pub seed: u64,
    /// Offline only: split the behavioural data per stage.
    #[serde(default)]
    pub single_reward: bool,
    /// Record wall-clock time; otherwise `runtime_ms` is 0 so outputs stay
    /// byte-identical across reruns.
    #[serde(default)]
    pub timing: bool,
}

fn default_expert() -> PolicySpec {
    PolicySpec::Bundle
}

fn default_strategy() -> Strategy {
    Strategy::RfExpress
}

fn default_eta_rule() -> EtaRule {
    EtaRule::Delta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub reward_id: String,
    pub budget_expert: usize,
    pub budget: usize,
    pub c_true: f64,
    pub c_hat: f64,
    pub abs_err: f64,
    pub c_best_true: Option<f64>,
    pub c_best_hat: Option<f64>,
    pub abs_err_best: Option<f64>,
    /// Realised sup-error of this `(trial, budget)` over the reward grid.
    pub eps: f64,
    pub eta: f64,
    pub label: bool,
    pub true_label: bool,
    pub label_best: Option<bool>,
    pub true_label_best: Option<bool>,
    pub support_size: Option<usize>,
    pub coverage_ok: Option<bool>,
    pub runtime_ms: u64,
}

impl TrialRecord {
    fn err(&self) -> f64 {
        self.abs_err.max(self.abs_err_best.unwrap_or(0.0))
    }
}

/// Linear-interpolation quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyRecords);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            min: v[0],
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub budget_expert: usize,
    pub budget: usize,
    pub trials: usize,
    pub abs_err: Quantiles,
    /// Per-trial sup-error over the grid (both best and worst offline).
    pub sup_err: Quantiles,
    /// Fraction of trials where `R̂_{Δ−ε} ⊆ R_Δ ⊆ R̂_{Δ+ε}` on the grid.
    pub sandwich_coverage: f64,
    /// Wrong labels among records with `|C_true − Δ| > ε`.
    pub misclassified: usize,
    pub eligible: usize,
    pub misclassification_rate: f64,
    /// Offline: fraction of trials with `Ẑ = Z`.
    pub support_recovered: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delta: f64,
    pub records: usize,
    pub budgets: Vec<BudgetSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Everything fixed across trials.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub mdp: TabularMdp,
    pub expert: Policy,
    pub behavior: Option<Policy>,
    pub coverage: Option<CoverageSet>,
    pub rewards: Vec<RewardFunction>,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// Exact `C` online, `C^w` offline.
    pub value: f64,
    /// Offline `C^b`.
    pub best: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::ConfigInvalid(msg.into()));
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|b| b.expert == 0 || b.samples == 0) {
            return bad("budgets must be a nonempty list of positive sizes");
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return bad("delta must be >= 0");
        }
        if let Some(b) = self.band {
            SuboptimalityBand::new(b.lower, b.upper)?;
        }
        if self.mode == Mode::Offline && self.behavior.is_none() {
            return bad("offline mode needs a behavior policy");
        }
        if self.mode == Mode::Online && self.single_reward {
            return bad("single_reward applies to offline mode only");
        }
        Ok(())
    }

    fn classification(&self) -> ClassificationConfig {
        let mut cfg = ClassificationConfig::new(self.delta);
        cfg.band = self.band;
        cfg
    }

    fn eta(&self, eps: f64) -> f64 {
        match self.eta_rule {
            EtaRule::Delta => self.delta,
            EtaRule::DeltaPlusEps => self.delta + eps,
            EtaRule::DeltaMinusEps => self.delta - eps,
            EtaRule::Explicit { eta } => eta,
        }
    }
}

fn build_policy(
    spec: &PolicySpec,
    mdp: &TabularMdp,
    bundle_expert: Option<&Policy>,
) -> Result<Policy> {
    let dim = mdp.table_dim();
    match spec {
        PolicySpec::Bundle => bundle_expert
            .cloned()
            .ok_or_else(|| Error::ConfigInvalid("this instance has no built-in expert".into())),
        PolicySpec::Random { seed } => gen_random_policy(dim, *seed),
        PolicySpec::Uniform => Ok(Policy::uniform(dim)),
        PolicySpec::MaskedUniform { masked, seed } => masked_uniform(dim, *masked, *seed),
        PolicySpec::File { path } => {
            let pi = io::read_policy(Path::new(path))?;
            mdp.check_table(pi.dim(), "policy")?;
            Ok(pi)
        }
    }
}

/// Uniform over `A − masked` actions per `(h, s)`, the rest drawn without replacement.
pub fn masked_uniform(dim: (usize, usize, usize), masked: usize, seed: u64) -> Result<Policy> {
    use rand::seq::SliceRandom;
    let (h, s, a) = dim;
    if masked >= a {
        return Err(Error::ConfigInvalid(format!(
            "cannot mask {masked} of {a} actions"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut probs = ndarray::Array3::zeros(dim);
    let w = 1.0 / (a - masked) as f64;
    for hh in 0..h {
        for ss in 0..s {
            let mut actions: Vec<usize> = (0..a).collect();
            actions.shuffle(&mut rng);
            for &aa in &actions[masked..] {
                probs[[hh, ss, aa]] = w;
            }
        }
    }
    Policy::new(probs)
}

fn build_rewards(
    spec: &RewardGridSpec,
    dim: (usize, usize, usize),
    bundle: &[RewardFunction],
) -> Result<Vec<RewardFunction>> {
    use rand::Rng;
    let rewards = match spec {
        RewardGridSpec::Bundle => bundle.to_vec(),
        RewardGridSpec::Explicit { rewards } => rewards
            .iter()
            .cloned()
            .map(RewardFile::into_reward)
            .collect::<Result<Vec<_>>>()?,
        RewardGridSpec::File { path } => io::read_rewards(Path::new(path))?,
        RewardGridSpec::Random { count, seed } => (0..*count)
            .map(|i| {
                gen_random_reward(dim, derive_seed(*seed, &[i as u64])).with_id(format!("r{i:03}"))
            })
            .collect(),
        RewardGridSpec::Linear {
            count,
            dim: d,
            seed,
        } => {
            if *d == 0 {
                return Err(Error::ConfigInvalid("linear grid needs dim >= 1".into()));
            }
            let mut rng = stream_rng(*seed, 0);
            let features =
                ndarray::Array3::from_shape_fn((dim.1, dim.2, *d), |_| rng.gen_range(-1.0..=1.0));
            let features = normalize_rows(features);
            let scale = 1.0 / (*d as f64).sqrt();
            (0..*count)
                .map(|i| {
                    let theta = ndarray::Array2::from_shape_fn((dim.0, *d), |_| {
                        scale * rng.gen_range(-1.0..=1.0)
                    });
                    Ok(LinearRewardClass::new(features.clone(), theta)?
                        .materialize()?
                        .with_id(format!("lin{i:03}")))
                })
                .collect::<Result<Vec<_>>>()?
        }
        RewardGridSpec::Vertex { count, seed } => (0..*count)
            .map(|i| {
                let mut rng = stream_rng(*seed, i as u64);
                let values =
                    ndarray::Array3::from_shape_fn(
                        dim,
                        |_| if rng.gen::<bool>() { 1.0 } else { -1.0 },
                    );
                Ok(RewardFunction::new(values)?.with_id(format!("v{i:03}")))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if rewards.is_empty() {
        return Err(Error::ConfigInvalid("reward grid is empty".into()));
    }
    for r in &rewards {
        if r.dim() != dim {
            return Err(Error::ConfigInvalid(format!(
                "reward shape {:?} does not match MDP {:?}",
                r.dim(),
                dim
            )));
        }
    }
    Ok(rewards
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.id.is_none() {
                r.with_id(format!("r{i:03}"))
            } else {
                r
            }
        })
        .collect())
}

fn normalize_rows(mut x: ndarray::Array3<f64>) -> ndarray::Array3<f64> {
    for mut row in x.lanes_mut(ndarray::Axis(2)) {
        let n = row.dot(&row).sqrt();
        if n > 1.0 {
            row /= n;
        }
    }
    x
}

/// Build the instance, policies, grid and exact targets.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    cfg.validate()?;
    let (mdp, bundle_expert, bundle_rewards) = match &cfg.instance {
        InstanceSpec::Random {
            states,
            actions,
            horizon,
            seed,
            min_prob,
        } => {
            let mdp = gen_random_mdp(*states, *actions, *horizon, *seed, *min_prob)?;
            (mdp, None, Vec::new())
        }
        InstanceSpec::Muffin => {
            let b = muffin_example();
            (b.mdp, b.expert_policies.into_iter().next(), b.rewards)
        }
        InstanceSpec::Offline { q } => {
            let b = build_offline_instance(*q)?;
            (b.mdp, b.expert_policies.into_iter().next(), b.rewards)
        }
        InstanceSpec::Files { mdp } => (io::read_mdp(Path::new(mdp))?, None, Vec::new()),
    };
    let (h, s, a) = mdp.table_dim();
    if h * s * a * s > ORACLE_ENTRY_CAP {
        return Err(Error::OracleTooLarge(format!(
            "{h}x{s}x{a}x{s} transition entries"
        )));
    }
    mdp.initial_state()?;
    let expert = build_policy(&cfg.expert, &mdp, bundle_expert.as_ref())?;
    let rewards = build_rewards(&cfg.rewards, mdp.table_dim(), &bundle_rewards)?;
    let (behavior, coverage) = match (cfg.mode, &cfg.behavior) {
        (Mode::Offline, Some(spec)) => {
            let pi = build_policy(spec, &mdp, bundle_expert.as_ref())?;
            let z = occupancy_measure(&mdp, &pi)?.support;
            (Some(pi), Some(z))
        }
        _ => (None, None),
    };
    let targets = par::map_slice(&rewards, Execution::default(), |r| -> Result<Target> {
        match &coverage {
            None => Ok(Target {
                value: compatibility(&mdp, &expert, r, cfg.band)?.value,
                best: None,
            }),
            Some(z) => {
                let rep = best_worst_compat(&mdp, &expert, r, z, cfg.band)?;
                Ok(Target {
                    value: rep.worst.unwrap_or(rep.value),
                    best: rep.best,
                })
            }
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PreparedExperiment {
        mdp,
        expert,
        behavior,
        coverage,
        rewards,
        targets,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, Execution::default())
}

/// Trials run concurrently under `Parallel`; the output does not depend on `exec`.
pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    let prep = prepare(cfg)?;
    let per_trial = par::map_range(cfg.trials, exec, |t| run_trial(cfg, &prep, t, exec));
    let mut records = Vec::with_capacity(cfg.trials * cfg.budgets.len() * prep.rewards.len());
    for r in per_trial {
        records.extend(r?);
    }
    records.sort_by(|x, y| {
        (x.trial, &x.reward_id, x.budget_expert, x.budget).cmp(&(
            y.trial,
            &y.reward_id,
            y.budget_expert,
            y.budget,
        ))
    });
    let summary = summarize(&records, cfg.delta)?;
    Ok(ExperimentOutput { records, summary })
}

/// One reward's estimate within a trial.
struct Estimate {
    value: f64,
    best: Option<f64>,
    support_size: Option<usize>,
    coverage_ok: Option<bool>,
}

fn run_trial(
    cfg: &ExperimentConfig,
    prep: &PreparedExperiment,
    trial: usize,
    exec: Execution,
) -> Result<Vec<TrialRecord>> {
    let class = cfg.classification();
    let mut out = Vec::new();
    for (bi, budget) in cfg.budgets.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[trial as u64, bi as u64]);
        let start = Instant::now();
        let expert_data = sample_trajectories_with(
            &prep.mdp,
            &prep.expert,
            budget.expert,
            derive_seed(seed, &[EXPERT_STREAM]),
            exec,
        )?;
        let estimates: Vec<Estimate> = match cfg.mode {
            Mode::Online => {
                let mut env = SimulatedEnv::new(&prep.mdp, derive_seed(seed, &[LEARNER_STREAM]));
                let xcfg = ExplorationConfig::new(
                    cfg.strategy,
                    budget.samples,
                    derive_seed(seed, &[LEARNER_STREAM, 1]),
                );
                let data = explore(&mut env, &xcfg, Some(&prep.rewards))?;
                caty_online(&data, &expert_data, &prep.rewards, &class)?
                    .into_iter()
                    .map(|o| Estimate {
                        value: o.report.value,
                        best: None,
                        support_size: None,
                        coverage_ok: None,
                    })
                    .collect()
            }
            Mode::Offline => {
                let behavior = prep.behavior.as_ref().expect("validated");
                let data = sample_trajectories_with(
                    &prep.mdp,
                    behavior,
                    budget.samples,
                    derive_seed(seed, &[LEARNER_STREAM]),
                    exec,
                )?;
                let model = OfflineModel::build(
                    &data,
                    prep.mdp.table_dim(),
                    cfg.single_reward,
                    derive_seed(seed, &[SPLIT_STREAM]),
                )?;
                let support = model.model.support();
                let ok = Some(Some(&support) == prep.coverage.as_ref());
                prep.rewards
                    .iter()
                    .map(|r| {
                        let res = model.classify(&expert_data, r, &class)?;
                        Ok(Estimate {
                            value: res.worst,
                            best: Some(res.best),
                            support_size: Some(res.support_size),
                            coverage_ok: ok,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let runtime_ms = if cfg.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let errs: Vec<(f64, Option<f64>)> = estimates
            .iter()
            .zip(&prep.targets)
            .map(|(e, t)| {
                (
                    (e.value - t.value).abs(),
                    e.best.zip(t.best).map(|(hat, tr)| (hat - tr).abs()),
                )
            })
            .collect();
        let eps = errs
            .iter()
            .map(|(w, b)| w.max(b.unwrap_or(0.0)))
            .fold(0.0, f64::max);
        let eta = cfg.eta(eps);
        for ((r, t), (e, err)) in prep
            .rewards
            .iter()
            .zip(&prep.targets)
            .zip(estimates.iter().zip(&errs))
        {
            out.push(TrialRecord {
                trial,
                seed,
                reward_id: r.id.clone().unwrap_or_default(),
                budget_expert: budget.expert,
                budget: budget.samples,
                c_true: t.value,
                c_hat: e.value,
                abs_err: err.0,
                c_best_true: t.best,
                c_best_hat: e.best,
                abs_err_best: err.1,
                eps,
                eta,
                label: e.value <= eta,
                true_label: t.value <= cfg.delta,
                label_best: e.best.map(|c| c <= eta),
                true_label_best: t.best.map(|c| c <= cfg.delta),
                support_size: e.support_size,
                coverage_ok: e.coverage_ok,
                runtime_ms,
            });
        }
    }
    Ok(out)
}

/// Whether `R̂_{Δ−ε} ⊆ R_Δ ⊆ R̂_{Δ+ε}` for pairs `(C, Ĉ)`, up to rounding.
pub fn sandwich_holds(pairs: &[(f64, f64)], delta: f64, eps: f64) -> bool {
    const SLACK: f64 = 1e-12;
    pairs.iter().all(|&(c, c_hat)| {
        let inner = c_hat > delta - eps || c <= delta + SLACK;
        let outer = c > delta || c_hat <= delta + eps + SLACK;
        inner && outer
    })
}

/// Per-budget aggregates; trials are grouped by `(trial, budget)`.
pub fn summarize(records: &[TrialRecord], delta: f64) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut keys: Vec<(usize, usize)> = records
        .iter()
        .map(|r| (r.budget_expert, r.budget))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let mut budgets = Vec::with_capacity(keys.len());
    for (be, b) in keys {
        let rows: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| (r.budget_expert, r.budget) == (be, b))
            .collect();
        let mut trials: Vec<usize> = rows.iter().map(|r| r.trial).collect();
        trials.sort_unstable();
        trials.dedup();
        let mut sup = Vec::with_capacity(trials.len());
        let mut sandwich = 0usize;
        let mut recovered = Vec::new();
        for &t in &trials {
            let group: Vec<&&TrialRecord> = rows.iter().filter(|r| r.trial == t).collect();
            let eps = group.iter().map(|r| r.err()).fold(0.0, f64::max);
            sup.push(eps);
            let mut pairs: Vec<(f64, f64)> = group.iter().map(|r| (r.c_true, r.c_hat)).collect();
            pairs.extend(group.iter().filter_map(|r| r.c_best_true.zip(r.c_best_hat)));
            sandwich += usize::from(sandwich_holds(&pairs, delta, eps));
            if let Some(ok) = group[0].coverage_ok {
                recovered.push(ok);
            }
        }
        let abs: Vec<f64> = rows
            .iter()
            .map(|r| r.abs_err)
            .chain(rows.iter().filter_map(|r| r.abs_err_best))
            .collect();
        let mut eligible = 0;
        let mut misclassified = 0;
        for r in &rows {
            let mut check = |c: f64, label: bool, truth: bool| {
                if (c - delta).abs() > r.eps {
                    eligible += 1;
                    misclassified += usize::from(label != truth);
                }
            };
            check(r.c_true, r.label, r.true_label);
            if let (Some(c), Some(l), Some(t)) = (r.c_best_true, r.label_best, r.true_label_best) {
                check(c, l, t);
            }
        }
        budgets.push(BudgetSummary {
            budget_expert: be,
            budget: b,
            trials: trials.len(),
            abs_err: Quantiles::of(&abs)?,
            sup_err: Quantiles::of(&sup)?,
            sandwich_coverage: sandwich as f64 / trials.len() as f64,
            misclassified,
            eligible,
            misclassification_rate: if eligible == 0 {
                0.0
            } else {
                misclassified as f64 / eligible as f64
            },
            support_recovered: (!recovered.is_empty())
                .then(|| recovered.iter().filter(|&&x| x).count() as f64 / recovered.len() as f64),
        });
    }
    Ok(Summary {
        delta,
        records: records.len(),
        budgets,
    })
}

pub fn records_csv(records: &[TrialRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per budget with the headline statistics.
pub fn summary_csv(summary: &Summary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "budget_expert",
        "budget",
        "trials",
        "abs_err_median",
        "abs_err_q75",
        "sup_err_q25",
        "sup_err_median",
        "sup_err_q75",
        "sup_err_max",
        "sandwich_coverage",
        "misclassified",
        "eligible",
        "misclassification_rate",
        "support_recovered",
    ])
    .map_err(csv_err)?;
    for b in &summary.budgets {
        w.write_record([
            b.budget_expert.to_string(),
            b.budget.to_string(),
            b.trials.to_string(),
            b.abs_err.median.to_string(),
            b.abs_err.q75.to_string(),
            b.sup_err.q25.to_string(),
            b.sup_err.median.to_string(),
            b.sup_err.q75.to_string(),
            b.sup_err.max.to_string(),
            b.sandwich_coverage.to_string(),
            b.misclassified.to_string(),
            b.eligible.to_string(),
            b.misclassification_rate.to_string(),
            b.support_recovered
                .map(|x| x.to_string())
                .unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `records.csv`, `records.json`, `summary.json` and `summary.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    io::write_text(&dir.join("records.csv"), &records_csv(&out.records)?)?;
    io::write_text(
        &dir.join("records.json"),
        &(serde_json::to_string_pretty(&out.records)? + "\n"),
    )?;
    io::write_text(
        &dir.join("summary.json"),
        &(serde_json::to_string_pretty(&out.summary)? + "\n"),
    )?;
    io::write_text(&dir.join("summary.csv"), &summary_csv(&out.summary)?)?;
    Ok(())
}
