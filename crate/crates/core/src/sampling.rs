//! Trajectory generation under the forward model and the empirical
//! estimators built from datasets.

use ndarray::{Array3, Array4, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compat::PartialTransitions;
use crate::error::{Error, Result};
use crate::mdp::{CoverageSet, Policy, RewardFunction, TabularMdp};
use crate::par::{self, Execution};
use crate::rng::stream_rng;

/// One episode: `H + 1` states and `H` actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.actions.len()).map(|h| (h, self.states[h], self.actions[h], self.states[h + 1]))
    }

    pub fn ret(&self, r: &RewardFunction) -> f64 {
        (0..self.actions.len())
            .map(|h| r.get(h, self.states[h], self.actions[h]))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub policy_id: Option<String>,
    #[serde(default)]
    pub mdp_id: Option<String>,
    #[serde(rename = "H")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(meta: DatasetMeta, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if t.actions.len() != meta.horizon || t.states.len() != meta.horizon + 1 {
                return Err(Error::ShapeMismatch(format!(
                    "trajectory {i} has {} actions / {} states, horizon is {}",
                    t.actions.len(),
                    t.states.len(),
                    meta.horizon
                )));
            }
        }
        Ok(Self { meta, trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.meta.horizon
    }

    /// Check every index against `(H, S, A)`.
    pub fn check_indices(&self, dim: (usize, usize, usize)) -> Result<()> {
        let (h, s, a) = dim;
        if self.meta.horizon != h {
            return Err(Error::ShapeMismatch(format!(
                "dataset horizon {} vs {h}",
                self.meta.horizon
            )));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.states.iter().any(|&x| x >= s) || t.actions.iter().any(|&x| x >= a) {
                return Err(Error::IndexOutOfRange(format!("trajectory {i}")));
            }
        }
        Ok(())
    }

    /// The common initial state of all trajectories.
    pub fn initial_state(&self) -> Result<usize> {
        let first = self
            .trajectories
            .first()
            .ok_or(Error::EmptyDataset)?
            .initial_state();
        if self.trajectories.iter().any(|t| t.initial_state() != first) {
            return Err(Error::NonDeterministicInitialState);
        }
        Ok(first)
    }
}

/// Draw an index from a probability row given a uniform variate.
pub(crate) fn draw(row: ArrayView1<'_, f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn rollout<R: Rng>(mdp: &TabularMdp, pi: &Policy, rng: &mut R) -> Trajectory {
    let h = mdp.horizon();
    let mut states = Vec::with_capacity(h + 1);
    let mut actions = Vec::with_capacity(h);
    let mut s = draw(mdp.initial().view(), rng.gen());
    states.push(s);
    for hh in 0..h {
        let a = draw(pi.action_dist(hh, s), rng.gen());
        s = draw(mdp.next_dist(hh, s, a), rng.gen());
        actions.push(a);
        states.push(s);
    }
    Trajectory { states, actions }
}

/// `n` i.i.d. trajectories of `pi`; trajectory `i` uses stream `(seed, i)`.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    pi: &Policy,
    n: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    sample_trajectories_with(mdp, pi, n, seed, Execution::default())
}

pub fn sample_trajectories_with(
    mdp: &TabularMdp,
    pi: &Policy,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<TrajectoryDataset> {
    mdp.check_table(pi.dim(), "policy")?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let trajectories = par::map_range(n, exec, |i| {
        rollout(mdp, pi, &mut stream_rng(seed, i as u64))
    });
    let meta = DatasetMeta {
        seed: Some(seed),
        policy_id: None,
        mdp_id: None,
        horizon: mdp.horizon(),
    };
    Ok(TrajectoryDataset { meta, trajectories })
}

/// Sample mean of trajectory returns.
pub fn estimate_expert_return(data: &TrajectoryDataset, r: &RewardFunction) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = data.trajectories.iter().map(|t| t.ret(r)).sum();
    Ok(total / data.len() as f64)
}

/// Random partition into `h` blocks of `⌊τ/h⌋` trajectories; the remainder is dropped.
pub fn split_dataset(
    data: &TrajectoryDataset,
    h: usize,
    seed: u64,
) -> Result<Vec<TrajectoryDataset>> {
    if h == 0 || data.len() < h {
        return Err(Error::TooFewTrajectories {
            have: data.len(),
            need: h.max(1),
        });
    }
    let block = data.len() / h;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    Ok(order
        .chunks_exact(block)
        .take(h)
        .map(|idx| TrajectoryDataset {
            meta: data.meta.clone(),
            trajectories: idx.iter().map(|&i| data.trajectories[i].clone()).collect(),
        })
        .collect())
}

/// Empirical support `Ẑ`, visit counts and `p̂` (defined only on `Ẑ`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    counts: Array3<u64>,
    next_counts: Array4<u64>,
    p_hat: Array4<f64>,
}

impl EmpiricalModel {
    /// Model with no observations for tables of shape `(H, S, A)`.
    pub fn empty(dim: (usize, usize, usize)) -> Self {
        let (h, s, a) = dim;
        Self {
            counts: Array3::zeros((h, s, a)),
            next_counts: Array4::zeros((h, s, a, s)),
            p_hat: Array4::zeros((h, s, a, s)),
        }
    }

    /// Record one observed transition and refresh its row of `p̂`.
    pub fn record(&mut self, h: usize, s: usize, a: usize, next: usize) {
        self.counts[[h, s, a]] += 1;
        self.next_counts[[h, s, a, next]] += 1;
        let n = self.counts[[h, s, a]] as f64;
        let counts = self.next_counts.slice(ndarray::s![h, s, a, ..]);
        let mut row = self.p_hat.slice_mut(ndarray::s![h, s, a, ..]);
        row.zip_mut_with(&counts, |p, &c| *p = c as f64 / n);
    }

    fn record_stage(&mut self, t: &Trajectory, h: usize) {
        self.record(h, t.states[h], t.actions[h], t.states[h + 1]);
    }

    pub fn table_dim(&self) -> (usize, usize, usize) {
        self.counts.dim()
    }

    pub fn count(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts[[h, s, a]]
    }

    pub fn counts(&self) -> &Array3<u64> {
        &self.counts
    }

    pub fn next_count(&self, h: usize, s: usize, a: usize, next: usize) -> u64 {
        self.next_counts[[h, s, a, next]]
    }

    /// `p̂_h(·|s,a)`, absent off `Ẑ`.
    pub fn transition(&self, h: usize, s: usize, a: usize) -> Option<ArrayView1<'_, f64>> {
        (self.counts[[h, s, a]] > 0).then(|| self.p_hat.slice(ndarray::s![h, s, a, ..]))
    }

    /// `Ẑ = {(s,a,h) : N_h(s,a) > 0}`.
    pub fn support(&self) -> CoverageSet {
        CoverageSet::from_mask(self.counts.mapv(|n| n > 0))
    }
}

impl PartialTransitions for EmpiricalModel {
    fn table_dim(&self) -> (usize, usize, usize) {
        self.counts.dim()
    }

    fn covered_row(&self, h: usize, s: usize, a: usize) -> Option<ArrayView1<'_, f64>> {
        self.transition(h, s, a)
    }
}

/// Pooled estimate: every stage of every trajectory contributes.
pub fn estimate_transitions(
    data: &TrajectoryDataset,
    dim: (usize, usize, usize),
) -> Result<EmpiricalModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_indices(dim)?;
    let mut model = EmpiricalModel::empty(dim);
    for t in &data.trajectories {
        for h in 0..dim.0 {
            model.record_stage(t, h);
        }
    }
    Ok(model)
}

/// Split estimate: stage `h` counts come only from block `h`.
pub fn estimate_transitions_split(
    blocks: &[TrajectoryDataset],
    dim: (usize, usize, usize),
) -> Result<EmpiricalModel> {
    if blocks.len() != dim.0 {
        return Err(Error::ShapeMismatch(format!(
            "{} blocks for horizon {}",
            blocks.len(),
            dim.0
        )));
    }
    if blocks.iter().any(|b| b.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let mut model = EmpiricalModel::empty(dim);
    for (h, block) in blocks.iter().enumerate() {
        block.check_indices(dim)?;
        for t in &block.trajectories {
            model.record_stage(t, h);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_offline_instance, gen_random_mdp, muffin_example};
    use crate::solve::{occupancy_measure, policy_evaluation};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use std::collections::HashSet;

    fn traj(states: &[usize], actions: &[usize]) -> Trajectory {
        Trajectory {
            states: states.to_vec(),
            actions: actions.to_vec(),
        }
    }

    #[test]
    fn deterministic_dynamics_give_identical_trajectories() {
        let b = build_offline_instance(0.0).unwrap();
        let d = sample_trajectories(&b.mdp, &b.expert_policies[0], 20, 3).unwrap();
        assert!(d.trajectories.iter().all(|t| t == &d.trajectories[0]));
    }

    #[test]
    fn q_one_always_reaches_s2() {
        let b = build_offline_instance(1.0).unwrap();
        let pi = Policy::constant_action(b.mdp.table_dim(), 1).unwrap();
        let d = sample_trajectories(&b.mdp, &pi, 200, 9).unwrap();
        assert!(d.trajectories.iter().all(|t| t.states[1] == 2));
    }

    #[test]
    fn sampling_is_reproducible_and_schedule_independent() {
        let mdp = gen_random_mdp(4, 3, 4, 1, None).unwrap();
        let pi = Policy::uniform(mdp.table_dim());
        let a = sample_trajectories_with(&mdp, &pi, 500, 11, Execution::Parallel).unwrap();
        let b = sample_trajectories_with(&mdp, &pi, 500, 11, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn action_frequencies_converge() {
        let mdp = gen_random_mdp(3, 3, 2, 4, None).unwrap();
        let probs = Array3::from_shape_fn(mdp.table_dim(), |(_, _, a)| [0.2, 0.5, 0.3][a]);
        let pi = Policy::new(probs).unwrap();
        let d = sample_trajectories(&mdp, &pi, 100_000, 5).unwrap();
        for a in 0..3 {
            let f = d.trajectories.iter().filter(|t| t.actions[0] == a).count() as f64 / 1e5;
            assert!((f - pi.prob(0, 0, a)).abs() < 0.02);
        }
    }

    #[test]
    fn occupancy_matches_empirical_frequencies() {
        let mdp = gen_random_mdp(3, 2, 3, 7, None).unwrap();
        let pi = Policy::uniform(mdp.table_dim());
        let occ = occupancy_measure(&mdp, &pi).unwrap();
        let n = 100_000;
        let d = sample_trajectories(&mdp, &pi, n, 17).unwrap();
        let mut freq = Array3::<f64>::zeros(mdp.table_dim());
        for t in &d.trajectories {
            for h in 0..3 {
                freq[[h, t.states[h], t.actions[h]]] += 1.0 / n as f64;
            }
        }
        for h in 0..3 {
            let l1: f64 = (&freq.index_axis(ndarray::Axis(0), h)
                - &occ.d.index_axis(ndarray::Axis(0), h))
                .mapv(f64::abs)
                .sum();
            assert!(l1 < 0.02, "stage {h}: L1 = {l1}");
        }
    }

    #[test]
    fn expert_return_examples() {
        let b = muffin_example();
        let r1 = &b.rewards[0];
        let zero = RewardFunction::constant((1, 1, 3), 0.0).unwrap();
        let single = TrajectoryDataset::new(
            DatasetMeta {
                horizon: 1,
                ..Default::default()
            },
            vec![traj(&[0, 0], &[0])],
        )
        .unwrap();
        assert_abs_diff_eq!(
            estimate_expert_return(&single, r1).unwrap(),
            0.99,
            epsilon = 1e-12
        );
        assert_eq!(estimate_expert_return(&single, &zero).unwrap(), 0.0);

        let mixed =
            Policy::new(Array3::from_shape_vec((1, 1, 3), vec![0.5, 0.5, 0.0]).unwrap()).unwrap();
        let d = sample_trajectories(&b.mdp, &mixed, 100_000, 2).unwrap();
        let exact = policy_evaluation(&b.mdp, r1, &mixed).unwrap().j;
        assert_abs_diff_eq!(exact, 0.995, epsilon = 1e-12);
        assert!((estimate_expert_return(&d, r1).unwrap() - exact).abs() < 0.02);

        let empty = TrajectoryDataset::new(
            DatasetMeta {
                horizon: 1,
                ..Default::default()
            },
            vec![],
        )
        .unwrap();
        assert!(matches!(
            estimate_expert_return(&empty, r1),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let mdp = gen_random_mdp(3, 2, 3, 2, None).unwrap();
        let d = sample_trajectories(&mdp, &Policy::uniform(mdp.table_dim()), 10, 1).unwrap();
        let blocks = split_dataset(&d, 3, 4).unwrap();
        assert_eq!(
            blocks.iter().map(|b| b.len()).collect::<Vec<_>>(),
            vec![3, 3, 3]
        );
        let small = TrajectoryDataset {
            meta: d.meta.clone(),
            trajectories: d.trajectories[..3].to_vec(),
        };
        assert!(split_dataset(&small, 3, 0)
            .unwrap()
            .iter()
            .all(|b| b.len() == 1));
        assert!(matches!(
            split_dataset(&small, 4, 0),
            Err(Error::TooFewTrajectories { have: 3, need: 4 })
        ));
        // identity of trajectories via their position in the source
        for seed in 0..20 {
            let blocks = split_dataset(&d, 3, seed).unwrap();
            let mut seen = HashSet::new();
            for b in &blocks {
                for t in &b.trajectories {
                    let pos: Vec<_> = d
                        .trajectories
                        .iter()
                        .enumerate()
                        .filter(|(_, x)| *x == t)
                        .map(|(i, _)| i)
                        .collect();
                    assert!(!pos.is_empty());
                    assert!(pos.iter().any(|&p| seen.insert(p)));
                }
            }
        }
    }

    #[test]
    fn hand_built_counts() {
        let meta = DatasetMeta {
            horizon: 2,
            ..Default::default()
        };
        let d = TrajectoryDataset::new(
            meta,
            vec![
                traj(&[0, 1, 0], &[0, 1]),
                traj(&[0, 1, 1], &[0, 1]),
                traj(&[0, 0, 1], &[0, 0]),
                traj(&[0, 1, 0], &[1, 1]),
            ],
        )
        .unwrap();
        let m = estimate_transitions(&d, (2, 2, 2)).unwrap();
        assert_eq!(m.count(0, 0, 0), 3);
        assert_eq!(m.count(0, 0, 1), 1);
        assert_eq!(m.count(1, 1, 1), 3);
        assert_eq!(m.count(1, 0, 0), 1);
        let row = m.transition(0, 0, 0).unwrap();
        assert_abs_diff_eq!(row[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(row[0], 1.0 / 3.0, epsilon = 1e-15);
        let row = m.transition(1, 1, 1).unwrap();
        assert_abs_diff_eq!(row[0], 2.0 / 3.0, epsilon = 1e-15);
        assert!(m.transition(0, 1, 0).is_none());
        assert_eq!(m.support().len(), 4);

        let blocks = vec![
            TrajectoryDataset {
                meta: d.meta.clone(),
                trajectories: d.trajectories[..2].to_vec(),
            },
            TrajectoryDataset {
                meta: d.meta.clone(),
                trajectories: d.trajectories[2..].to_vec(),
            },
        ];
        let split = estimate_transitions_split(&blocks, (2, 2, 2)).unwrap();
        assert_eq!(split.count(0, 0, 0), 2);
        assert_eq!(split.count(0, 0, 1), 0);
        assert_eq!(split.count(1, 0, 0), 1);
        assert_eq!(split.count(1, 1, 1), 1);
    }

    #[test]
    fn offline_instance_hides_a2() {
        let b = build_offline_instance(0.3).unwrap();
        let d = sample_trajectories(&b.mdp, &b.expert_policies[0], 100, 0).unwrap();
        let m = estimate_transitions(&d, b.mdp.table_dim()).unwrap();
        assert!(!m.support().contains(0, 1, 0));
        assert!(m.support().contains(0, 0, 0));
        assert_eq!(m.transition(0, 0, 0).unwrap().to_vec(), vec![0.0, 1.0, 0.0]);
    }
}
