//! Fixture generators: random tabular MDPs, the one-state dessert example,
//! the `S + 1` expert family used for the non-identifiability argument and
//! the two-action instance whose compatibility cannot be learned offline.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{arr2, Array1, Array2, Array3, Array4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{LinearRewardClass, Policy, RewardFunction, TabularMdp};
use crate::rng::stream_rng;

/// An MDP with expert policies, canonical rewards and an optional linear class.
#[derive(Debug, Clone)]
pub struct InstanceBundle {
    pub mdp: TabularMdp,
    pub expert_policies: Vec<Policy>,
    pub rewards: Vec<RewardFunction>,
    pub linear_class: Option<LinearRewardClass>,
    pub tag: String,
}

fn dirichlet_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Dirichlet(1, …, 1) via normalised exponentials
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Random MDP with Dirichlet rows, an optional floor on every entry and
/// `d0 = δ_{s=0}`.
pub fn gen_random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
    min_prob: Option<f64>,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(Error::DimensionMismatch("S, A, H must all be >= 1".into()));
    }
    let floor = min_prob.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&floor) || floor * num_states as f64 > 1.0 + 1e-12 {
        return Err(Error::InvalidFloor {
            min_prob: floor,
            states: num_states,
        });
    }
    let free = (1.0 - floor * num_states as f64).max(0.0);
    let mut rng = stream_rng(seed, 0);
    let mut p = Array4::zeros((horizon, num_states, num_actions, num_states));
    for h in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = dirichlet_row(&mut rng, num_states);
                for (next, w) in row.into_iter().enumerate() {
                    p[[h, s, a, next]] = floor + free * w;
                }
            }
        }
    }
    let mut d0 = Array1::zeros(num_states);
    d0[0] = 1.0;
    TabularMdp::new(d0, p)
}

/// Random stochastic policy with Dirichlet rows.
pub fn gen_random_policy(dim: (usize, usize, usize), seed: u64) -> Result<Policy> {
    let mut rng = stream_rng(seed, 1);
    let mut probs = Array3::zeros(dim);
    for h in 0..dim.0 {
        for s in 0..dim.1 {
            for (a, w) in dirichlet_row(&mut rng, dim.2).into_iter().enumerate() {
                probs[[h, s, a]] = w;
            }
        }
    }
    Policy::new(probs)
}

/// Reward with i.i.d. entries uniform in `[-1, 1]`.
pub fn gen_random_reward(dim: (usize, usize, usize), seed: u64) -> RewardFunction {
    let mut rng = stream_rng(seed, 2);
    RewardFunction::new(Array3::from_shape_fn(dim, |_| rng.gen_range(-1.0..=1.0)))
        .expect("entries drawn in range")
}

/// One state, three actions (muffin, cake, soup), horizon one; the expert
/// eats the muffin. Rewards are `r1`, `r2` and `r1'` in that order.
pub fn muffin_example() -> InstanceBundle {
    let mdp = TabularMdp::new(
        Array1::from_elem(1, 1.0),
        Array4::from_elem((1, 1, 3, 1), 1.0),
    )
    .expect("single-state MDP is valid");
    let reward = |vals: [f64; 3], id: &str| {
        RewardFunction::new(Array3::from_shape_vec((1, 1, 3), vals.to_vec()).expect("shape"))
            .expect("values in range")
            .with_id(id)
    };
    InstanceBundle {
        mdp,
        expert_policies: vec![Policy::constant_action((1, 1, 3), 0).expect("valid action")],
        rewards: vec![
            reward([0.99, 1.0, 0.0], "r1"),
            reward([0.0, 1.0, 0.0], "r2"),
            reward([0.99, 0.0, 1.0], "r1_prime"),
        ],
        linear_class: None,
        tag: "muffin".into(),
    }
}

/// Expert `k` of the lower-bound family: `k = 0` plays `a1` everywhere,
/// `k = i ≥ 1` deviates to `a2` only at state `i − 1`.
pub fn lower_bound_expert(num_states: usize, k: usize) -> Result<Policy> {
    if k > num_states {
        return Err(Error::IndexOutOfRange(format!(
            "hypothesis {k} of {}",
            num_states + 1
        )));
    }
    let actions =
        Array2::from_shape_fn((1, num_states), |(_, s)| usize::from(k >= 1 && s == k - 1));
    Policy::deterministic(&actions, 2)
}

/// `r_θ(s, a) = θ·1{a = a1}` on the lower-bound MDP.
pub fn lower_bound_reward(num_states: usize, theta: f64) -> Result<RewardFunction> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    lower_bound_features(num_states)
        .with_theta(arr2(&[[theta]]))?
        .materialize()
}

fn lower_bound_features(num_states: usize) -> LinearRewardClass {
    let phi = Array3::from_shape_fn(
        (num_states, 2, 1),
        |(_, a, _)| if a == 0 { 1.0 } else { 0.0 },
    );
    LinearRewardClass::new(phi, arr2(&[[1.0]])).expect("unit features")
}

/// The θ-grid `{−1, −0.5, 0, 0.5, 1}` used to compare feasible sets.
pub const THETA_GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// `S` states, two actions, `H = 1`, uniform `d0`, features `φ(s,a) = 1{a = a1}`,
/// and the `S + 1` deterministic experts.
pub fn build_lower_bound_family(num_states: usize) -> Result<InstanceBundle> {
    if num_states < 2 {
        return Err(Error::DimensionMismatch("the family needs S >= 2".into()));
    }
    let mut p = Array4::zeros((1, num_states, 2, num_states));
    for s in 0..num_states {
        for a in 0..2 {
            p[[0, s, a, s]] = 1.0;
        }
    }
    let mdp = TabularMdp::new(Array1::from_elem(num_states, 1.0 / num_states as f64), p)?;
    let expert_policies = (0..=num_states)
        .map(|k| lower_bound_expert(num_states, k))
        .collect::<Result<_>>()?;
    let rewards = THETA_GRID
        .iter()
        .map(|&t| Ok(lower_bound_reward(num_states, t)?.with_id(format!("theta={t}"))))
        .collect::<Result<_>>()?;
    Ok(InstanceBundle {
        mdp,
        expert_policies,
        rewards,
        linear_class: Some(lower_bound_features(num_states)),
        tag: format!("lower-bound-S{num_states}"),
    })
}

/// Closed-form suboptimalities `(Δ_0(θ), Δ_i(θ))` of the all-`a1` expert and
/// of any single-deviation expert under `r_θ`.
pub fn lower_bound_deltas(theta: f64, num_states: usize) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    if num_states < 2 {
        return Err(Error::DimensionMismatch("S >= 2 required".into()));
    }
    let s = num_states as f64;
    Ok(if theta < 0.0 {
        (-theta, -(s - 1.0) * theta / s)
    } else if theta == 0.0 {
        (0.0, 0.0)
    } else {
        (0.0, theta / s)
    })
}

/// Three states, two actions, `H = 2`. From `s0`, `a1` goes to `s1` and `a2`
/// goes to `s2` with probability `q` (else `s1`). All other rows self-loop.
/// Expert and behaviour both play `a1`; the reward is 1 on `s0` and `s2`.
pub fn build_offline_instance(q: f64) -> Result<InstanceBundle> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::QOutOfRange(q));
    }
    let mut p = Array4::zeros((2, 3, 2, 3));
    for h in 0..2 {
        for s in 0..3 {
            for a in 0..2 {
                p[[h, s, a, s]] = 1.0;
            }
        }
    }
    p[[0, 0, 0, 0]] = 0.0;
    p[[0, 0, 0, 1]] = 1.0;
    p[[0, 0, 1, 0]] = 0.0;
    p[[0, 0, 1, 1]] = 1.0 - q;
    p[[0, 0, 1, 2]] = q;
    let mdp = TabularMdp::new(ndarray::arr1(&[1.0, 0.0, 0.0]), p)?;
    let reward = RewardFunction::new(Array3::from_shape_fn((2, 3, 2), |(_, s, _)| {
        if s == 1 {
            0.0
        } else {
            1.0
        }
    }))?
    .with_id("s0-s2");
    let always_a1 = Policy::constant_action((2, 3, 2), 0)?;
    Ok(InstanceBundle {
        mdp,
        expert_policies: vec![always_a1],
        rewards: vec![reward],
        linear_class: None,
        tag: format!("offline-q{q}"),
    })
}

/// Which of the `S + 1` lower-bound experts agree with the observed actions.
/// Returns hypothesis indices (0 = all-`a1`, `i` = deviation at state `i − 1`).
pub fn adversarial_hypothesis_check(
    num_states: usize,
    queried: &BTreeSet<usize>,
    observed: &BTreeMap<usize, usize>,
) -> Result<Vec<usize>> {
    if let Some(&s) = queried.iter().find(|&&s| s >= num_states) {
        return Err(Error::IndexOutOfRange(format!("queried state {s}")));
    }
    if observed.keys().ne(queried.iter()) {
        return Err(Error::InconsistentObservations);
    }
    let survivors: Vec<usize> = (0..=num_states)
        .filter(|&k| {
            observed.iter().all(|(&s, &a)| {
                let expected = usize::from(k >= 1 && s == k - 1);
                a == expected
            })
        })
        .collect();
    if survivors.is_empty() {
        return Err(Error::InconsistentObservations);
    }
    Ok(survivors)
}
