//! Exact reward (non)compatibility on a known MDP, feasible-set membership,
//! best/worst compatibility under partial coverage, and the extension notions
//! (multiplicative, entropy-regularised, multi-environment).

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CoverageSet, Policy, RewardFunction, TabularMdp};
use crate::solve::{self, max_of, min_of};

/// Values within this distance below zero are treated as zero.
pub const COMPAT_TOL: f64 = 1e-9;

/// Known bounds `[L, U]` on the expert's suboptimality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuboptimalityBand {
    pub lower: f64,
    pub upper: f64,
}

impl SuboptimalityBand {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0 && upper >= lower && upper.is_finite()) {
            return Err(Error::InvalidBand { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// The degenerate band `[0, 0]`, i.e. an optimal expert.
    pub fn optimal() -> Self {
        Self {
            lower: 0.0,
            upper: 0.0,
        }
    }

    /// `min_{x ∈ [L,U]} |x − y|` in its piecewise form.
    pub fn distance(&self, y: f64) -> f64 {
        if y < self.lower {
            self.lower - y
        } else if y > self.upper {
            y - self.upper
        } else {
            0.0
        }
    }

    /// Best/worst compatibility from the extreme suboptimalities
    /// `Δ_m ≤ Δ_M`: the worst case is the farthest of the two from the band,
    /// the best case is zero unless the whole interval misses the band.
    pub fn best_worst(&self, delta_min: f64, delta_max: f64) -> (f64, f64) {
        let (l, u) = (self.lower, self.upper);
        let ind = |cond: bool, v: f64| if cond { v } else { 0.0 };
        let best = ind(delta_max < l, l - delta_max).max(ind(delta_min > u, delta_min - u));
        let worst = ind(delta_min < l, l - delta_min).max(ind(delta_max > u, delta_max - u));
        (best, worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompatibilityMode {
    Optimal,
    Suboptimal,
    OfflineBestWorst,
    Multiplicative,
    Entropy,
}

/// Exact or estimated (non)compatibility with its intermediates.
///
/// For best/worst reports `C` carries the worst-case value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub mode: CompatibilityMode,
    #[serde(rename = "C")]
    pub value: f64,
    #[serde(rename = "C_best", skip_serializing_if = "Option::is_none", default)]
    pub best: Option<f64>,
    #[serde(rename = "C_worst", skip_serializing_if = "Option::is_none", default)]
    pub worst: Option<f64>,
    #[serde(rename = "J_expert")]
    pub j_expert: f64,
    #[serde(rename = "J_opt", skip_serializing_if = "Option::is_none", default)]
    pub j_opt: Option<f64>,
    #[serde(rename = "J_opt_min", skip_serializing_if = "Option::is_none", default)]
    pub j_opt_min: Option<f64>,
    #[serde(rename = "J_opt_max", skip_serializing_if = "Option::is_none", default)]
    pub j_opt_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_m: Option<f64>,
    #[serde(rename = "delta_M", skip_serializing_if = "Option::is_none", default)]
    pub delta_big_m: Option<f64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none", default)]
    pub band_lower: Option<f64>,
    #[serde(rename = "U", skip_serializing_if = "Option::is_none", default)]
    pub band_upper: Option<f64>,
}

impl CompatibilityReport {
    fn scalar(mode: CompatibilityMode, value: f64, j_expert: f64, j_opt: f64) -> Self {
        Self {
            mode,
            value,
            best: None,
            worst: None,
            j_expert,
            j_opt: Some(j_opt),
            j_opt_min: None,
            j_opt_max: None,
            delta_m: None,
            delta_big_m: None,
            band_lower: None,
            band_upper: None,
        }
    }

    fn with_band(mut self, band: Option<SuboptimalityBand>) -> Self {
        if let Some(b) = band {
            self.band_lower = Some(b.lower);
            self.band_upper = Some(b.upper);
        }
        self
    }
}

fn clamp_nonnegative(x: f64) -> f64 {
    if x < 0.0 {
        debug_assert!(x >= -1e-6, "compatibility {x} is far below zero");
        0.0
    } else {
        x
    }
}

/// `C(r) = J*(r;p) − J^{π^E}(r;p)` for an optimal expert.
pub fn compatibility_opt(
    mdp: &TabularMdp,
    expert: &Policy,
    r: &RewardFunction,
) -> Result<CompatibilityReport> {
    let j_opt = solve::backward_induction(mdp, r)?.j;
    let j_expert = solve::policy_evaluation(mdp, r, expert)?.j;
    let value = clamp_nonnegative(j_opt - j_expert);
    Ok(CompatibilityReport::scalar(
        CompatibilityMode::Optimal,
        value,
        j_expert,
        j_opt,
    ))
}

/// Distance of the expert's suboptimality `J* − J^E` from the band `[L, U]`.
pub fn compatibility_subopt(
    mdp: &TabularMdp,
    expert: &Policy,
    r: &RewardFunction,
    band: SuboptimalityBand,
) -> Result<CompatibilityReport> {
    let band = SuboptimalityBand::new(band.lower, band.upper)?;
    let j_opt = solve::backward_induction(mdp, r)?.j;
    let j_expert = solve::policy_evaluation(mdp, r, expert)?.j;
    let value = band.distance(j_opt - j_expert);
    Ok(
        CompatibilityReport::scalar(CompatibilityMode::Suboptimal, value, j_expert, j_opt)
            .with_band(Some(band)),
    )
}

/// Dispatch on the presence of a band.
pub fn compatibility(
    mdp: &TabularMdp,
    expert: &Policy,
    r: &RewardFunction,
    band: Option<SuboptimalityBand>,
) -> Result<CompatibilityReport> {
    match band {
        Some(b) => compatibility_subopt(mdp, expert, r, b),
        None => compatibility_opt(mdp, expert, r),
    }
}

/// Is `r` in the (band-)feasible set of `expert`?
pub fn feasible_membership(
    mdp: &TabularMdp,
    expert: &Policy,
    r: &RewardFunction,
    band: Option<SuboptimalityBand>,
) -> Result<bool> {
    Ok(compatibility(mdp, expert, r, band)?.value <= COMPAT_TOL)
}

/// Transition model known only on a subset of triples.
pub trait PartialTransitions {
    /// `(H, S, A)`.
    fn table_dim(&self) -> (usize, usize, usize);
    /// Next-state distribution if `(s, a, h)` is covered.
    fn covered_row(&self, h: usize, s: usize, a: usize) -> Option<ArrayView1<'_, f64>>;
}

/// The exact transition model restricted to a coverage set.
#[derive(Debug, Clone, Copy)]
pub struct RestrictedModel<'a> {
    pub mdp: &'a TabularMdp,
    pub coverage: &'a CoverageSet,
}

impl PartialTransitions for RestrictedModel<'_> {
    fn table_dim(&self) -> (usize, usize, usize) {
        self.mdp.table_dim()
    }

    fn covered_row(&self, h: usize, s: usize, a: usize) -> Option<ArrayView1<'_, f64>> {
        self.coverage
            .contains(s, a, h)
            .then(|| self.mdp.next_dist(h, s, a))
    }
}

/// Q-tables and values of the min and max recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct EviValues {
    pub q_min: Array3<f64>,
    pub q_max: Array3<f64>,
    pub j_min: f64,
    pub j_max: f64,
}

/// Extended value iteration over the class of models agreeing with `model`
/// on its covered triples. Off coverage, the max recursion moves all mass to
/// the best next state and the min recursion to the worst one (lowest index on
/// ties); on coverage both take the expectation under the known row.
pub fn extended_value_iteration<M: PartialTransitions + ?Sized>(
    model: &M,
    r: &RewardFunction,
    s0: usize,
) -> Result<EviValues> {
    let (h, s, a) = model.table_dim();
    if r.dim() != (h, s, a) {
        return Err(Error::ShapeMismatch(format!(
            "reward {:?} vs model {:?}",
            r.dim(),
            (h, s, a)
        )));
    }
    if s0 >= s {
        return Err(Error::IndexOutOfRange(format!("initial state {s0}")));
    }
    let mut q_min = Array3::zeros((h, s, a));
    let mut q_max = Array3::zeros((h, s, a));
    let mut v_min = Array2::<f64>::zeros((h, s));
    let mut v_max = Array2::<f64>::zeros((h, s));
    for hh in (0..h).rev() {
        let (hi_next, lo_next) = if hh + 1 < h {
            (max_of(v_max.row(hh + 1)), min_of(v_min.row(hh + 1)))
        } else {
            (0.0, 0.0)
        };
        for ss in 0..s {
            for aa in 0..a {
                let reward = r.get(hh, ss, aa);
                let (cont_min, cont_max) = if hh + 1 == h {
                    (0.0, 0.0)
                } else {
                    match model.covered_row(hh, ss, aa) {
                        Some(row) => (row.dot(&v_min.row(hh + 1)), row.dot(&v_max.row(hh + 1))),
                        None => (lo_next, hi_next),
                    }
                };
                q_min[[hh, ss, aa]] = reward + cont_min;
                q_max[[hh, ss, aa]] = reward + cont_max;
            }
            v_min[[hh, ss]] = max_of(q_min.slice(ndarray::s![hh, ss, ..]));
            v_max[[hh, ss]] = max_of(q_max.slice(ndarray::s![hh, ss, ..]));
        }
    }
    Ok(EviValues {
        j_min: v_min[[0, s0]],
        j_max: v_max[[0, s0]],
        q_min,
        q_max,
    })
}

/// `(min, max)` of `J*(r; p')` over models agreeing with `mdp` on `coverage`.
pub fn evi_extreme_values(
    mdp: &TabularMdp,
    coverage: &CoverageSet,
    r: &RewardFunction,
) -> Result<(f64, f64)> {
    mdp.check_table(r.dim(), "reward")?;
    if coverage.dim() != mdp.table_dim() {
        return Err(Error::ShapeMismatch(
            "coverage set does not match MDP".into(),
        ));
    }
    let s0 = mdp.initial_state()?;
    let evi = extended_value_iteration(&RestrictedModel { mdp, coverage }, r, s0)?;
    Ok((evi.j_min, evi.j_max))
}

/// Best/worst report from `J^E` and the extreme optimal values. Without a
/// band the expert is optimal, i.e. the band is `[0, 0]`.
pub fn best_worst_report(
    j_expert: f64,
    j_opt_min: f64,
    j_opt_max: f64,
    band: Option<SuboptimalityBand>,
) -> CompatibilityReport {
    let delta_m = j_opt_min - j_expert;
    let delta_big_m = j_opt_max - j_expert;
    let (best, worst) = band
        .unwrap_or_else(SuboptimalityBand::optimal)
        .best_worst(delta_m, delta_big_m);
    CompatibilityReport {
        mode: CompatibilityMode::OfflineBestWorst,
        value: worst,
        best: Some(best),
        worst: Some(worst),
        j_expert,
        j_opt: None,
        j_opt_min: Some(j_opt_min),
        j_opt_max: Some(j_opt_max),
        delta_m: Some(delta_m),
        delta_big_m: Some(delta_big_m),
        band_lower: None,
        band_upper: None,
    }
    .with_band(band)
}

/// Exact best and worst compatibility given coverage `Z`. `J^E` uses the true
/// transitions; only the optimal value ranges over the equivalence class.
pub fn best_worst_compat(
    mdp: &TabularMdp,
    expert: &Policy,
    r: &RewardFunction,
    coverage: &CoverageSet,
    band: Option<SuboptimalityBand>,
) -> Result<CompatibilityReport> {
    if let Some(b) = band {
        SuboptimalityBand::new(b.lower, b.upper)?;
    }
    let (j_min, j_max) = evi_extreme_values(mdp, coverage, r)?;
    let j_expert = solve::policy_evaluation(mdp, r, expert)?.j;
    let mut report = best_worst_report(j_expert, j_min, j_max, band);
    if band.is_none() {
        report.best = report.best.map(clamp_nonnegative);
        report.worst = report.worst.map(clamp_nonnegative);
    }
    Ok(report)
}

/// `J^{π^E} / J*`, defined for nonnegative rewards with positive optimum.
pub fn multiplicative_compat(mdp: &TabularMdp, expert: &Policy, r: &RewardFunction) -> Result<f64> {
    if !r.is_nonnegative() {
        return Err(Error::NegativeReward);
    }
    let j_opt = solve::backward_induction(mdp, r)?.j;
    if j_opt <= f64::EPSILON {
        return Err(Error::UndefinedForZeroOptimum);
    }
    let j_expert = solve::policy_evaluation(mdp, r, expert)?.j;
    Ok((j_expert / j_opt).clamp(0.0, 1.0))
}

/// `max_π J̄^π − J̄^{π^E}` with per-step entropy bonus.
pub fn entropy_compat(
    mdp: &TabularMdp,
    expert: &Policy,
    r: &RewardFunction,
) -> Result<CompatibilityReport> {
    let (soft, _) = solve::soft_backward_induction(mdp, r)?;
    let j_expert = solve::soft_policy_evaluation(mdp, r, expert)?.j;
    let value = clamp_nonnegative(soft.j - j_expert);
    Ok(CompatibilityReport::scalar(
        CompatibilityMode::Entropy,
        value,
        j_expert,
        soft.j,
    ))
}

/// Worst compatibility across environments.
pub fn multi_env_aggregate(reports: &[CompatibilityReport]) -> Result<f64> {
    reports
        .iter()
        .map(|r| r.value)
        .fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |m| m.max(c)))
        })
        .ok_or(Error::EmptyList)
}
