//! Independent oracles for the integration tests: plain-loop dynamic
//! programming, exhaustive deterministic-policy search and vertex completion
//! of partially known transition tables.

#![allow(dead_code)]

use ndarray::{Array3, Array4};
use reward_compat::bench::{
    Budget, EtaRule, ExperimentConfig, InstanceSpec, Mode, PolicySpec, RewardGridSpec,
};
use reward_compat::online::Strategy;
use reward_compat::{RewardFunction, TabularMdp};

/// The fixed 5-state, 3-action, `H = 4` instance shared by the rate checks.
pub const RATE_MDP_SEED: u64 = 20_241;
pub const RATE_MIN_PROB: f64 = 0.16;

pub fn rate_config(
    mode: Mode,
    budgets: &[usize],
    trials: usize,
    delta: f64,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSpec::Random {
            states: 5,
            actions: 3,
            horizon: 4,
            seed: RATE_MDP_SEED,
            min_prob: Some(RATE_MIN_PROB),
        },
        expert: PolicySpec::Random { seed: 3 },
        behavior: (mode == Mode::Offline)
            .then_some(PolicySpec::MaskedUniform { masked: 1, seed: 4 }),
        rewards: RewardGridSpec::Random { count: 16, seed: 5 },
        budgets: budgets
            .iter()
            .map(|&n| Budget {
                expert: n,
                samples: n,
            })
            .collect(),
        mode,
        strategy: Strategy::RfExpress,
        band: None,
        delta,
        eta_rule: EtaRule::Delta,
        trials,
        seed,
        single_reward: false,
        timing: false,
    }
}

/// `V*_0(s)` weighted by `d0`, by explicit loops over plain indices.
pub fn naive_optimal_value(p: &Array4<f64>, r: &Array3<f64>, d0: &[f64]) -> f64 {
    let (h_len, s_len, a_len, _) = p.dim();
    let mut next = vec![0.0; s_len];
    for h in (0..h_len).rev() {
        let mut cur = vec![f64::NEG_INFINITY; s_len];
        for s in 0..s_len {
            for a in 0..a_len {
                let mut q = r[[h, s, a]];
                for (s2, v) in next.iter().enumerate() {
                    q += p[[h, s, a, s2]] * v;
                }
                cur[s] = cur[s].max(q);
            }
        }
        next = cur;
    }
    d0.iter().zip(&next).map(|(d, v)| d * v).sum()
}

/// Value of the deterministic policy `actions[h][s]`.
pub fn naive_policy_value(
    p: &Array4<f64>,
    r: &Array3<f64>,
    d0: &[f64],
    actions: &[Vec<usize>],
) -> f64 {
    let (h_len, s_len, _, _) = p.dim();
    let mut next = vec![0.0; s_len];
    for h in (0..h_len).rev() {
        let mut cur = vec![0.0; s_len];
        for s in 0..s_len {
            let a = actions[h][s];
            cur[s] = r[[h, s, a]]
                + next
                    .iter()
                    .enumerate()
                    .map(|(s2, v)| p[[h, s, a, s2]] * v)
                    .sum::<f64>();
        }
        next = cur;
    }
    d0.iter().zip(&next).map(|(d, v)| d * v).sum()
}

/// Maximum of `J^π` over all `(A^S)^H` deterministic policies.
pub fn brute_force_optimum(mdp: &TabularMdp, r: &RewardFunction) -> f64 {
    let (h_len, s_len, a_len) = mdp.table_dim();
    let d0 = mdp.initial().to_vec();
    let slots = h_len * s_len;
    let mut digits = vec![0usize; slots];
    let mut best = f64::NEG_INFINITY;
    loop {
        let actions: Vec<Vec<usize>> = digits.chunks(s_len).map(<[usize]>::to_vec).collect();
        best = best.max(naive_policy_value(
            mdp.transitions(),
            r.values(),
            &d0,
            &actions,
        ));
        let mut i = 0;
        loop {
            if i == slots {
                return best;
            }
            digits[i] += 1;
            if digits[i] < a_len {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Every table obtained from `base` by replacing the rows of `missing`
/// (triples `(h, s, a)`) with point masses.
pub fn vertex_completions(
    base: &Array4<f64>,
    missing: &[(usize, usize, usize)],
) -> Vec<Array4<f64>> {
    let s_len = base.dim().1;
    let total = s_len.pow(missing.len() as u32);
    (0..total)
        .map(|mut code| {
            let mut p = base.clone();
            for &(h, s, a) in missing {
                let target = code % s_len;
                code /= s_len;
                for s2 in 0..s_len {
                    p[[h, s, a, s2]] = if s2 == target { 1.0 } else { 0.0 };
                }
            }
            p
        })
        .collect()
}

/// `(min, max)` of `J*` over the vertex completions.
pub fn completion_extremes(
    base: &Array4<f64>,
    missing: &[(usize, usize, usize)],
    r: &RewardFunction,
    d0: &[f64],
) -> (f64, f64) {
    vertex_completions(base, missing)
        .iter()
        .map(|p| naive_optimal_value(p, r.values(), d0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
            (lo.min(j), hi.max(j))
        })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
