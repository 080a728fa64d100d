//! Offline classification from an expert dataset and a behavioural dataset:
//! best and worst compatibility via extended value iteration over the
//! transition models consistent with the behavioural data.

use serde::{Deserialize, Serialize};

use crate::compat::{best_worst_report, extended_value_iteration};
use crate::error::{Error, Result};
use crate::mdp::RewardFunction;
use crate::online::ClassificationConfig;
use crate::sampling::{
    estimate_expert_return, estimate_transitions, estimate_transitions_split, split_dataset,
    EmpiricalModel, TrajectoryDataset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineResult {
    #[serde(rename = "C_best")]
    pub best: f64,
    #[serde(rename = "C_worst")]
    pub worst: f64,
    pub class_best: bool,
    pub class_worst: bool,
    #[serde(rename = "J_expert")]
    pub j_expert: f64,
    #[serde(rename = "J_opt_min")]
    pub j_opt_min: f64,
    #[serde(rename = "J_opt_max")]
    pub j_opt_max: f64,
    pub delta_m: f64,
    #[serde(rename = "delta_M")]
    pub delta_big_m: f64,
    pub support_size: usize,
    pub eta_best: f64,
    pub eta_worst: f64,
}

/// `(Ẑ, p̂)` built once from the behavioural data and shared across rewards.
#[derive(Debug, Clone)]
pub struct OfflineModel {
    pub model: EmpiricalModel,
    pub initial_state: usize,
    pub split: bool,
}

impl OfflineModel {
    /// With `single_reward`, the data is split into `H` random blocks and
    /// stage `h` is estimated from block `h` only; otherwise counts are pooled.
    pub fn build(
        behavior: &TrajectoryDataset,
        dim: (usize, usize, usize),
        single_reward: bool,
        seed: u64,
    ) -> Result<Self> {
        if behavior.is_empty() {
            return Err(Error::EmptyDataset);
        }
        behavior.check_indices(dim)?;
        let initial_state = behavior.initial_state()?;
        let model = if single_reward {
            let blocks = split_dataset(behavior, dim.0, seed)?;
            estimate_transitions_split(&blocks, dim)?
        } else {
            estimate_transitions(behavior, dim)?
        };
        Ok(Self {
            model,
            initial_state,
            split: single_reward,
        })
    }

    pub fn classify(
        &self,
        expert: &TrajectoryDataset,
        r: &RewardFunction,
        cfg: &ClassificationConfig,
    ) -> Result<OfflineResult> {
        cfg.validate()?;
        if expert.is_empty() {
            return Err(Error::EmptyDataset);
        }
        expert.check_indices(self.model.table_dim())?;
        if expert.initial_state()? != self.initial_state {
            return Err(Error::NonDeterministicInitialState);
        }
        let j_expert = estimate_expert_return(expert, r)?;
        let (j_min, j_max) = evi_empirical(&self.model, r, self.initial_state)?;
        let report = best_worst_report(j_expert, j_min, j_max, cfg.band);
        let eta_best = cfg.eta_best.unwrap_or(cfg.eta);
        let eta_worst = cfg.eta_worst.unwrap_or(cfg.eta);
        let best = report.best.expect("best/worst report");
        let worst = report.worst.expect("best/worst report");
        Ok(OfflineResult {
            best,
            worst,
            class_best: best <= eta_best,
            class_worst: worst <= eta_worst,
            j_expert,
            j_opt_min: j_min,
            j_opt_max: j_max,
            delta_m: j_min - j_expert,
            delta_big_m: j_max - j_expert,
            support_size: self.model.support().len(),
            eta_best,
            eta_worst,
        })
    }
}

/// `(Ĵ*_m, Ĵ*_M)`: extended value iteration over models agreeing with `p̂` on `Ẑ`.
pub fn evi_empirical(model: &EmpiricalModel, r: &RewardFunction, s0: usize) -> Result<(f64, f64)> {
    let evi = extended_value_iteration(model, r, s0)?;
    Ok((evi.j_min, evi.j_max))
}

/// Full pipeline for one reward.
pub fn caty_off_classify(
    expert: &TrajectoryDataset,
    behavior: &TrajectoryDataset,
    r: &RewardFunction,
    cfg: &ClassificationConfig,
    single_reward: bool,
    seed: u64,
) -> Result<OfflineResult> {
    let model = OfflineModel::build(behavior, r.dim(), single_reward, seed)?;
    model.classify(expert, r, cfg)
}
