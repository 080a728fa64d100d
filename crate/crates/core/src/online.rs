//! Online reward classification: reward-free exploration of an environment
//! that is reachable only through episode rollouts, followed by a pure
//! classification phase that compares a plug-in (or upper-confidence)
//! optimal value with the expert's empirical return.

use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compat::{CompatibilityMode, CompatibilityReport, SuboptimalityBand};
use crate::error::{Error, Result};
use crate::mdp::{Policy, RewardFunction, TabularMdp};
use crate::rng::{derive_seed, stream_rng};
use crate::sampling::{
    draw, estimate_expert_return, DatasetMeta, EmpiricalModel, Trajectory, TrajectoryDataset,
};
use crate::solve::{argmax, max_of};

/// Episodic access to an unknown environment. Implementations expose no
/// transition table; the learner sees only visited states.
pub trait EpisodicEnv {
    /// `(H, S, A)`.
    fn table_dim(&self) -> (usize, usize, usize);
    /// Begin an episode and return its initial state.
    fn reset(&mut self) -> usize;
    /// Play `action` in `state` at stage `h` and observe the next state.
    fn step(&mut self, h: usize, state: usize, action: usize) -> usize;
}

/// Simulator over a known MDP. Episode `k` draws from stream `(seed, k)`.
#[derive(Debug)]
pub struct SimulatedEnv<'a> {
    mdp: &'a TabularMdp,
    seed: u64,
    episodes: u64,
    rng: ChaCha8Rng,
}

impl<'a> SimulatedEnv<'a> {
    pub fn new(mdp: &'a TabularMdp, seed: u64) -> Self {
        Self {
            mdp,
            seed,
            episodes: 0,
            rng: stream_rng(seed, 0),
        }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }
}

impl EpisodicEnv for SimulatedEnv<'_> {
    fn table_dim(&self) -> (usize, usize, usize) {
        self.mdp.table_dim()
    }

    fn reset(&mut self) -> usize {
        self.rng = stream_rng(self.seed, self.episodes);
        self.episodes += 1;
        draw(self.mdp.initial().view(), self.rng.gen())
    }

    fn step(&mut self, h: usize, state: usize, action: usize) -> usize {
        draw(self.mdp.next_dist(h, state, action), self.rng.gen())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    RfExpress,
    BpiUcbvi,
    Uniform,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RfExpress => "rf-express",
            Strategy::BpiUcbvi => "bpi-ucbvi",
            Strategy::Uniform => "uniform",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf-express" => Ok(Strategy::RfExpress),
            "bpi-ucbvi" => Ok(Strategy::BpiUcbvi),
            "uniform" => Ok(Strategy::Uniform),
            other => Err(Error::ConfigInvalid(format!("unknown strategy {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationConfig {
    pub strategy: Strategy,
    /// Total number of episodes τ.
    pub budget: usize,
    /// Confidence parameter inside the bonus logarithm.
    pub delta: f64,
    /// Constant `c` in `c·H·sqrt(ln(SAHτ/δ) / max(1, N))`.
    pub bonus_scale: f64,
    /// Seed for the learner's own randomness (uniform strategy).
    pub seed: u64,
}

impl ExplorationConfig {
    pub fn new(strategy: Strategy, budget: usize, seed: u64) -> Self {
        Self {
            strategy,
            budget,
            delta: 0.1,
            bonus_scale: 1.0,
            seed,
        }
    }
}

/// Per-reward exploration result in bpi-ucbvi mode.
#[derive(Debug, Clone)]
pub struct BpiRun {
    pub reward: RewardFunction,
    pub episodes: usize,
    pub model: EmpiricalModel,
    /// Upper-confidence Q-table after the last episode.
    pub q_upper: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct ExplorationData {
    pub strategy: Strategy,
    pub budget: usize,
    pub initial_state: usize,
    /// Every episode, in collection order.
    pub dataset: TrajectoryDataset,
    /// Pooled model over all episodes.
    pub model: EmpiricalModel,
    pub bpi_runs: Vec<BpiRun>,
}

struct Bonus {
    scale: f64,
    log_term: f64,
}

impl Bonus {
    fn new(dim: (usize, usize, usize), cfg: &ExplorationConfig) -> Self {
        let (h, s, a) = dim;
        let log_term = ((s * a * h) as f64 * cfg.budget as f64 / cfg.delta)
            .ln()
            .max(1.0);
        Self {
            scale: cfg.bonus_scale * h as f64,
            log_term,
        }
    }

    fn at(&self, n: u64) -> f64 {
        self.scale * (self.log_term / (n.max(1)) as f64).sqrt()
    }
}

/// Reward-free uncertainty `W_h(s,a) = min(H−h, b + p̂·max_a' W_{h+1})`,
/// saturated at `H − h` on unvisited triples.
fn uncertainty_table(model: &EmpiricalModel, bonus: &Bonus) -> Array3<f64> {
    let (h, s, a) = model.table_dim();
    let mut w = Array3::zeros((h, s, a));
    let mut next_max = vec![0.0; s];
    for hh in (0..h).rev() {
        let cap = (h - hh) as f64;
        for ss in 0..s {
            for aa in 0..a {
                w[[hh, ss, aa]] = match model.transition(hh, ss, aa) {
                    None => cap,
                    Some(row) => {
                        let cont: f64 = row.iter().zip(&next_max).map(|(p, v)| p * v).sum();
                        (bonus.at(model.count(hh, ss, aa)) + cont).min(cap)
                    }
                };
            }
        }
        for (ss, m) in next_max.iter_mut().enumerate() {
            *m = max_of(w.slice(ndarray::s![hh, ss, ..]));
        }
    }
    w
}

/// Optimistic `Q̃_h(s,a) = min(H−h, r + p̂·Ṽ_{h+1} + b)`, `H − h` off support.
fn upper_q_table(model: &EmpiricalModel, r: &RewardFunction, bonus: &Bonus) -> Array3<f64> {
    let (h, s, a) = model.table_dim();
    let mut q = Array3::zeros((h, s, a));
    let mut next_v = vec![0.0; s];
    for hh in (0..h).rev() {
        let cap = (h - hh) as f64;
        for ss in 0..s {
            for aa in 0..a {
                q[[hh, ss, aa]] = match model.transition(hh, ss, aa) {
                    None => cap,
                    Some(row) => {
                        let cont: f64 = if hh + 1 < h {
                            row.iter().zip(&next_v).map(|(p, v)| p * v).sum()
                        } else {
                            0.0
                        };
                        (r.get(hh, ss, aa) + cont + bonus.at(model.count(hh, ss, aa))).min(cap)
                    }
                };
            }
        }
        for (ss, v) in next_v.iter_mut().enumerate() {
            *v = max_of(q.slice(ndarray::s![hh, ss, ..]));
        }
    }
    q
}

/// Greedy action on `table`; ties go to the least-visited action, then the
/// lowest index, so saturated bonuses still rotate through actions.
fn explore_action(table: &Array3<f64>, model: &EmpiricalModel, h: usize, s: usize) -> usize {
    let row = table.slice(ndarray::s![h, s, ..]);
    let best = max_of(row);
    (0..row.len())
        .filter(|&a| row[a] >= best - 1e-12)
        .min_by_key(|&a| model.count(h, s, a))
        .unwrap_or_else(|| argmax(row))
}

fn run_episode<E, F>(
    env: &mut E,
    model: &mut EmpiricalModel,
    s0: &mut Option<usize>,
    mut choose: F,
) -> Result<Trajectory>
where
    E: EpisodicEnv + ?Sized,
    F: FnMut(&EmpiricalModel, usize, usize) -> usize,
{
    let (h, _, _) = model.table_dim();
    let mut s = env.reset();
    match *s0 {
        None => *s0 = Some(s),
        Some(x) if x != s => return Err(Error::NonDeterministicInitialState),
        _ => {}
    }
    let mut states = vec![s];
    let mut actions = Vec::with_capacity(h);
    for hh in 0..h {
        let a = choose(model, hh, s);
        let next = env.step(hh, s, a);
        model.record(hh, s, a, next);
        actions.push(a);
        states.push(next);
        s = next;
    }
    Ok(Trajectory { states, actions })
}

/// Collect `budget` episodes with the configured strategy.
pub fn explore<E: EpisodicEnv + ?Sized>(
    env: &mut E,
    cfg: &ExplorationConfig,
    rewards: Option<&[RewardFunction]>,
) -> Result<ExplorationData> {
    if cfg.budget == 0 {
        return Err(Error::BudgetTooSmall);
    }
    let dim = env.table_dim();
    let bonus = Bonus::new(dim, cfg);
    let mut pooled = EmpiricalModel::empty(dim);
    let mut trajectories = Vec::with_capacity(cfg.budget);
    let mut s0 = None;
    let mut bpi_runs = Vec::new();

    match cfg.strategy {
        Strategy::Uniform => {
            let mut rng = stream_rng(derive_seed(cfg.seed, &[0x756e_6966]), 0);
            for _ in 0..cfg.budget {
                let t = run_episode(env, &mut pooled, &mut s0, |_, _, _| rng.gen_range(0..dim.2))?;
                trajectories.push(t);
            }
        }
        Strategy::RfExpress => {
            for _ in 0..cfg.budget {
                let w = uncertainty_table(&pooled, &bonus);
                let t = run_episode(env, &mut pooled, &mut s0, |m, h, s| {
                    explore_action(&w, m, h, s)
                })?;
                trajectories.push(t);
            }
        }
        Strategy::BpiUcbvi => {
            let rewards = rewards
                .filter(|r| !r.is_empty())
                .ok_or(Error::MissingRewardsForBpiMode)?;
            if cfg.budget < rewards.len() {
                return Err(Error::BudgetTooSmall);
            }
            let base = cfg.budget / rewards.len();
            let extra = cfg.budget % rewards.len();
            for (i, r) in rewards.iter().enumerate() {
                if r.dim() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "reward {i} has shape {:?}",
                        r.dim()
                    )));
                }
                let episodes = base + usize::from(i < extra);
                let mut model = EmpiricalModel::empty(dim);
                for _ in 0..episodes {
                    let q = upper_q_table(&model, r, &bonus);
                    let t = run_episode(env, &mut model, &mut s0, |m, h, s| {
                        explore_action(&q, m, h, s)
                    })?;
                    for (h, s, a, next) in t.transitions() {
                        pooled.record(h, s, a, next);
                    }
                    trajectories.push(t);
                }
                let q_upper = upper_q_table(&model, r, &bonus);
                bpi_runs.push(BpiRun {
                    reward: r.clone(),
                    episodes,
                    model,
                    q_upper,
                });
            }
        }
    }

    let initial_state = s0.expect("budget >= 1 runs at least one episode");
    let meta = DatasetMeta {
        seed: Some(cfg.seed),
        policy_id: Some(cfg.strategy.as_str().into()),
        mdp_id: None,
        horizon: dim.0,
    };
    Ok(ExplorationData {
        strategy: cfg.strategy,
        budget: cfg.budget,
        initial_state,
        dataset: TrajectoryDataset { meta, trajectories },
        model: pooled,
        bpi_runs,
    })
}

/// Optimal values on `p̂` with unvisited triples absorbing (continuation 0).
pub fn plug_in_optimal_values(
    model: &EmpiricalModel,
    r: &RewardFunction,
) -> Result<(Array3<f64>, Array2<f64>)> {
    plug_in(model, r, None)
}

/// Evaluation of `pi` on `p̂` with the same absorbing convention.
pub fn plug_in_policy_values(
    model: &EmpiricalModel,
    r: &RewardFunction,
    pi: &Policy,
) -> Result<Array2<f64>> {
    Ok(plug_in(model, r, Some(pi))?.1)
}

fn plug_in(
    model: &EmpiricalModel,
    r: &RewardFunction,
    pi: Option<&Policy>,
) -> Result<(Array3<f64>, Array2<f64>)> {
    let (h, s, a) = model.table_dim();
    if r.dim() != (h, s, a) || pi.is_some_and(|p| p.dim() != (h, s, a)) {
        return Err(Error::ShapeMismatch(
            "reward/policy vs empirical model".into(),
        ));
    }
    let mut q = Array3::zeros((h, s, a));
    let mut v = Array2::<f64>::zeros((h, s));
    for hh in (0..h).rev() {
        for ss in 0..s {
            for aa in 0..a {
                let cont = match (hh + 1 < h, model.transition(hh, ss, aa)) {
                    (true, Some(row)) => row.dot(&v.row(hh + 1)),
                    _ => 0.0,
                };
                q[[hh, ss, aa]] = r.get(hh, ss, aa) + cont;
            }
            let row = q.slice(ndarray::s![hh, ss, ..]);
            v[[hh, ss]] = match pi {
                Some(p) => p.action_dist(hh, ss).dot(&row),
                None => max_of(row),
            };
        }
    }
    Ok((q, v))
}

/// `Ĵ*(r)`: plug-in backward induction (rf-express, uniform) or the
/// upper-confidence value built while exploring for `r` (bpi-ucbvi).
pub fn plan_optimal_estimate(data: &ExplorationData, r: &RewardFunction) -> Result<f64> {
    match data.strategy {
        Strategy::RfExpress | Strategy::Uniform => {
            let (_, v) = plug_in_optimal_values(&data.model, r)?;
            Ok(v[[0, data.initial_state]])
        }
        Strategy::BpiUcbvi => {
            let run = data
                .bpi_runs
                .iter()
                .find(|run| run.reward.values() == r.values())
                .ok_or_else(|| Error::UnknownRewardForBpiMode(r.label(usize::MAX)))?;
            Ok(max_of(run.q_upper.slice(ndarray::s![
                0,
                data.initial_state,
                ..
            ])))
        }
    }
}

/// Problem threshold Δ, algorithm thresholds and optional band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    pub delta: f64,
    pub eta: f64,
    #[serde(default)]
    pub band: Option<SuboptimalityBand>,
    /// Offline only: threshold for the best-compatibility label (defaults to `eta`).
    #[serde(default)]
    pub eta_best: Option<f64>,
    /// Offline only: threshold for the worst-compatibility label (defaults to `eta`).
    #[serde(default)]
    pub eta_worst: Option<f64>,
}

impl ClassificationConfig {
    /// Threshold Δ with `η = Δ`.
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            eta: delta,
            band: None,
            eta_best: None,
            eta_worst: None,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_band(mut self, band: SuboptimalityBand) -> Self {
        self.band = Some(band);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::ConfigInvalid(format!(
                "threshold {} must be >= 0",
                self.delta
            )));
        }
        if let Some(b) = self.band {
            SuboptimalityBand::new(b.lower, b.upper)?;
        }
        Ok(())
    }

    /// The band in effect; an optimal expert is the band `[0, 0]`.
    pub fn effective_band(&self) -> SuboptimalityBand {
        self.band.unwrap_or_else(SuboptimalityBand::optimal)
    }
}

/// `Ĉ = dist(Ĵ* − Ĵ^E, [L, U])` and the label `Ĉ ≤ η`.
pub fn classify_online(
    j_expert: f64,
    j_opt: f64,
    cfg: &ClassificationConfig,
) -> Result<(f64, bool)> {
    cfg.validate()?;
    let c = cfg.effective_band().distance(j_opt - j_expert);
    Ok((c, c <= cfg.eta))
}

/// Pick bpi-ucbvi when `|R|·ln(|R|/δ) ≤ S + ln(1/δ)`; `None` means an
/// infinite or unspecified reward set.
pub fn choose_strategy(num_rewards: Option<usize>, num_states: usize, delta: f64) -> Strategy {
    match num_rewards {
        Some(n) if n >= 1 => {
            let n = n as f64;
            if n * (n / delta).ln() <= num_states as f64 + (1.0 / delta).ln() {
                Strategy::BpiUcbvi
            } else {
                Strategy::RfExpress
            }
        }
        _ => Strategy::RfExpress,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineOutcome {
    pub reward_id: String,
    pub report: CompatibilityReport,
    pub label: bool,
}

/// Classification phase for every reward.
pub fn caty_online(
    data: &ExplorationData,
    expert: &TrajectoryDataset,
    rewards: &[RewardFunction],
    cfg: &ClassificationConfig,
) -> Result<Vec<OnlineOutcome>> {
    cfg.validate()?;
    if expert.is_empty() {
        return Err(Error::EmptyDataset);
    }
    expert.initial_state()?;
    expert.check_indices(data.model.table_dim())?;
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let j_expert = estimate_expert_return(expert, r)?;
            let j_opt = plan_optimal_estimate(data, r)?;
            let (c, label) = classify_online(j_expert, j_opt, cfg)?;
            let mode = if cfg.band.is_some() {
                CompatibilityMode::Suboptimal
            } else {
                CompatibilityMode::Optimal
            };
            let report = CompatibilityReport {
                mode,
                value: c,
                best: None,
                worst: None,
                j_expert,
                j_opt: Some(j_opt),
                j_opt_min: None,
                j_opt_max: None,
                delta_m: None,
                delta_big_m: None,
                band_lower: cfg.band.map(|b| b.lower),
                band_upper: cfg.band.map(|b| b.upper),
            };
            Ok(OnlineOutcome {
                reward_id: r.label(i),
                report,
                label,
            })
        })
        .collect()
}
