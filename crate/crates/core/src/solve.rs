//! Exact dynamic programming on a known tabular MDP.

use ndarray::{Array2, Array3, ArrayView1};

use crate::error::{Error, Result};
use crate::mdp::{CoverageSet, Policy, RewardFunction, TabularMdp};

/// Cap on the number of deterministic policies [`enumerate_deterministic_policies`]
/// will produce by default.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Probabilities at or below this are treated as zero when building supports.
pub const SUPPORT_TOL: f64 = 1e-12;

/// `Q[h][s][a]`, `V[h][s]` and `J = Σ_s d0(s) V[0][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub q: Array3<f64>,
    pub v: Array2<f64>,
    pub j: f64,
}

impl ValueTables {
    /// Greedy deterministic policy, lowest action index on ties.
    pub fn greedy_policy(&self) -> Policy {
        let (h, s, a) = self.q.dim();
        let actions = Array2::from_shape_fn((h, s), |(hh, ss)| {
            argmax(self.q.slice(ndarray::s![hh, ss, ..]))
        });
        Policy::deterministic(&actions, a).expect("argmax is always a valid action")
    }
}

/// State-action occupancy `d[h][s][a]` with its support and smallest positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub d: Array3<f64>,
    pub support: CoverageSet,
    pub d_min: f64,
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn max_of(row: ArrayView1<'_, f64>) -> f64 {
    row.fold(f64::NEG_INFINITY, |m, &x| m.max(x))
}

pub(crate) fn min_of(row: ArrayView1<'_, f64>) -> f64 {
    row.fold(f64::INFINITY, |m, &x| m.min(x))
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let m = max_of(row);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn initial_value(mdp: &TabularMdp, v: &Array2<f64>) -> f64 {
    mdp.initial().dot(&v.row(0))
}

/// Optimal Q/V for an arbitrary (unvalidated) reward table.
pub(crate) fn optimal_values_raw(mdp: &TabularMdp, r: &Array3<f64>) -> ValueTables {
    let (h, s, a) = mdp.table_dim();
    let mut q = Array3::zeros((h, s, a));
    let mut v = Array2::zeros((h, s));
    for hh in (0..h).rev() {
        for ss in 0..s {
            for aa in 0..a {
                let cont = if hh + 1 < h {
                    mdp.next_dist(hh, ss, aa).dot(&v.row(hh + 1))
                } else {
                    0.0
                };
                q[[hh, ss, aa]] = r[[hh, ss, aa]] + cont;
            }
            v[[hh, ss]] = max_of(q.slice(ndarray::s![hh, ss, ..]));
        }
    }
    let j = initial_value(mdp, &v);
    ValueTables { q, v, j }
}

pub(crate) fn evaluate_raw(mdp: &TabularMdp, r: &Array3<f64>, pi: &Policy) -> ValueTables {
    let (h, s, a) = mdp.table_dim();
    let mut q = Array3::zeros((h, s, a));
    let mut v = Array2::zeros((h, s));
    for hh in (0..h).rev() {
        for ss in 0..s {
            for aa in 0..a {
                let cont = if hh + 1 < h {
                    mdp.next_dist(hh, ss, aa).dot(&v.row(hh + 1))
                } else {
                    0.0
                };
                q[[hh, ss, aa]] = r[[hh, ss, aa]] + cont;
            }
            v[[hh, ss]] = pi
                .action_dist(hh, ss)
                .dot(&q.slice(ndarray::s![hh, ss, ..]));
        }
    }
    let j = initial_value(mdp, &v);
    ValueTables { q, v, j }
}

/// Optimal values by backward induction.
pub fn backward_induction(mdp: &TabularMdp, r: &RewardFunction) -> Result<ValueTables> {
    mdp.check_table(r.dim(), "reward")?;
    Ok(optimal_values_raw(mdp, r.values()))
}

/// Bellman evaluation of `pi`.
pub fn policy_evaluation(mdp: &TabularMdp, r: &RewardFunction, pi: &Policy) -> Result<ValueTables> {
    mdp.check_table(r.dim(), "reward")?;
    mdp.check_table(pi.dim(), "policy")?;
    Ok(evaluate_raw(mdp, r.values(), pi))
}

/// Forward recursion for the occupancy measure `d^{p,π}`.
pub fn occupancy_measure(mdp: &TabularMdp, pi: &Policy) -> Result<OccupancyMeasure> {
    mdp.check_table(pi.dim(), "policy")?;
    let (h, s, a) = mdp.table_dim();
    let mut d = Array3::zeros((h, s, a));
    for ss in 0..s {
        for aa in 0..a {
            d[[0, ss, aa]] = mdp.initial()[ss] * pi.prob(0, ss, aa);
        }
    }
    for hh in 0..h.saturating_sub(1) {
        let mut state_mass = vec![0.0; s];
        for ss in 0..s {
            for aa in 0..a {
                let w = d[[hh, ss, aa]];
                if w == 0.0 {
                    continue;
                }
                for (next, &p) in mdp.next_dist(hh, ss, aa).iter().enumerate() {
                    state_mass[next] += w * p;
                }
            }
        }
        for (ss, &m) in state_mass.iter().enumerate() {
            for aa in 0..a {
                d[[hh + 1, ss, aa]] = m * pi.prob(hh + 1, ss, aa);
            }
        }
    }
    let support = CoverageSet::from_mask(d.mapv(|x| x > SUPPORT_TOL));
    let d_min = d
        .iter()
        .copied()
        .filter(|&x| x > SUPPORT_TOL)
        .fold(f64::INFINITY, f64::min);
    Ok(OccupancyMeasure { d, support, d_min })
}

/// Soft (entropy-regularised) optimal values:
/// `V̄[h][s] = ln Σ_a exp(r_h(s,a) + Σ_{s'} p V̄[h+1][s'])`, and the softmax policy.
pub fn soft_backward_induction(
    mdp: &TabularMdp,
    r: &RewardFunction,
) -> Result<(ValueTables, Policy)> {
    mdp.check_table(r.dim(), "reward")?;
    let (h, s, a) = mdp.table_dim();
    let mut q = Array3::zeros((h, s, a));
    let mut v = Array2::zeros((h, s));
    let mut probs = Array3::zeros((h, s, a));
    for hh in (0..h).rev() {
        for ss in 0..s {
            for aa in 0..a {
                let cont = if hh + 1 < h {
                    mdp.next_dist(hh, ss, aa).dot(&v.row(hh + 1))
                } else {
                    0.0
                };
                q[[hh, ss, aa]] = r.get(hh, ss, aa) + cont;
            }
            let row = q.slice(ndarray::s![hh, ss, ..]);
            let lse = log_sum_exp(row);
            v[[hh, ss]] = lse;
            for aa in 0..a {
                probs[[hh, ss, aa]] = (q[[hh, ss, aa]] - lse).exp();
            }
            // renormalise away rounding so the policy validates
            let z: f64 = probs.slice(ndarray::s![hh, ss, ..]).sum();
            probs
                .slice_mut(ndarray::s![hh, ss, ..])
                .mapv_inplace(|x| x / z);
        }
    }
    let j = initial_value(mdp, &v);
    Ok((ValueTables { q, v, j }, Policy::new(probs)?))
}

/// Entropy-regularised evaluation: each step earns `r − ln π(a|s)` in expectation.
pub fn soft_policy_evaluation(
    mdp: &TabularMdp,
    r: &RewardFunction,
    pi: &Policy,
) -> Result<ValueTables> {
    mdp.check_table(r.dim(), "reward")?;
    mdp.check_table(pi.dim(), "policy")?;
    let (h, s, a) = mdp.table_dim();
    let mut q = Array3::zeros((h, s, a));
    let mut v = Array2::zeros((h, s));
    for hh in (0..h).rev() {
        for ss in 0..s {
            let mut value = 0.0;
            for aa in 0..a {
                let cont = if hh + 1 < h {
                    mdp.next_dist(hh, ss, aa).dot(&v.row(hh + 1))
                } else {
                    0.0
                };
                q[[hh, ss, aa]] = r.get(hh, ss, aa) + cont;
                let p = pi.prob(hh, ss, aa);
                if p > 0.0 {
                    value += p * (q[[hh, ss, aa]] - p.ln());
                }
            }
            v[[hh, ss]] = value;
        }
    }
    let j = initial_value(mdp, &v);
    Ok(ValueTables { q, v, j })
}

/// `sup_π |J^π(r) − J^π(r')|`, attained by a deterministic policy on one of
/// the two difference rewards.
pub fn dall_distance(
    mdp: &TabularMdp,
    r: &RewardFunction,
    r_prime: &RewardFunction,
) -> Result<f64> {
    mdp.check_table(r.dim(), "reward")?;
    mdp.check_table(r_prime.dim(), "reward")?;
    let diff = r.values() - r_prime.values();
    let forward = optimal_values_raw(mdp, &diff).j;
    let backward = optimal_values_raw(mdp, &diff.mapv(|x| -x)).j;
    Ok(forward.max(backward).max(0.0))
}

/// Iterator over every deterministic Markov policy in lexicographic order of
/// the `(h, s)`-indexed action table.
#[derive(Debug, Clone)]
pub struct DeterministicPolicies {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for DeterministicPolicies {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        let current = self.next.take()?;
        let table = Array2::from_shape_vec((self.horizon, self.num_states), current.clone())
            .expect("odometer length matches H·S");
        let mut digits = current;
        let mut carry = true;
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < self.num_actions {
                carry = false;
                break;
            }
            *d = 0;
        }
        if !carry {
            self.next = Some(digits);
        }
        Some(Policy::deterministic(&table, self.num_actions).expect("digits are < A"))
    }
}

/// Enumerate all `A^{S·H}` deterministic policies, refusing beyond `cap`.
pub fn enumerate_deterministic_policies(
    mdp: &TabularMdp,
    cap: u64,
) -> Result<DeterministicPolicies> {
    let (h, s, a) = mdp.table_dim();
    let count = (a as f64).powf((s * h) as f64);
    if count > cap as f64 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    Ok(DeterministicPolicies {
        horizon: h,
        num_states: s,
        num_actions: a,
        next: Some(vec![0; h * s]),
    })
}
