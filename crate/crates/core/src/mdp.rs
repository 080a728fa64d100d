//! Tabular finite-horizon MDPs without reward, rewards, policies and coverage
//! sets. Stages are 0-based in code: stage `h` ranges over `0..horizon`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Absolute tolerance for probability row sums.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// `⟨S, A, H, d0, p⟩` with `p` indexed `[h][s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    initial: Array1<f64>,
    transitions: Array4<f64>,
}

impl TabularMdp {
    /// Build and validate. Dimensions are read off the transition tensor.
    pub fn new(initial: Array1<f64>, transitions: Array4<f64>) -> Result<Self> {
        let (h, s, a, s2) = transitions.dim();
        if s != s2 {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor has {s} source states but {s2} next states"
            )));
        }
        let mdp = Self {
            num_states: s,
            num_actions: a,
            horizon: h,
            initial,
            transitions,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Check every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let (s, a, h) = (self.num_states, self.num_actions, self.horizon);
        if s == 0 || a == 0 || h == 0 {
            return Err(Error::DimensionMismatch(format!(
                "S={s}, A={a}, H={h} must all be >= 1"
            )));
        }
        if self.initial.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "d0 has length {} but S = {s}",
                self.initial.len()
            )));
        }
        if self.transitions.dim() != (h, s, a, s) {
            return Err(Error::DimensionMismatch(format!(
                "transitions have shape {:?}, expected {:?}",
                self.transitions.dim(),
                (h, s, a, s)
            )));
        }
        if self.initial.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::NegativeEntry("d0".into()));
        }
        let total: f64 = self.initial.sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NonStochasticInitial(total));
        }
        for hh in 0..h {
            for ss in 0..s {
                for aa in 0..a {
                    let row = self.transitions.slice(ndarray::s![hh, ss, aa, ..]);
                    if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                        return Err(Error::NegativeEntry(format!("p[{hh}][{ss}][{aa}]")));
                    }
                    let sum = row.sum();
                    if (sum - 1.0).abs() > STOCHASTIC_TOL {
                        return Err(Error::NonStochasticRow {
                            h: hh,
                            s: ss,
                            a: aa,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    pub fn transitions(&self) -> &Array4<f64> {
        &self.transitions
    }

    /// Next-state distribution `p_h(·|s,a)`.
    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.transitions.slice(ndarray::s![h, s, a, ..])
    }

    /// `(H, S, A)` as used for reward and policy tables.
    pub fn table_dim(&self) -> (usize, usize, usize) {
        (self.horizon, self.num_states, self.num_actions)
    }

    /// The unique initial state, if `d0` is a point mass.
    pub fn initial_state(&self) -> Result<usize> {
        single_initial_state(&self.initial)
    }

    /// Replace the transition rows of a single triple; used by vertex-completion
    /// oracles and fixtures.
    pub fn with_row(&self, h: usize, s: usize, a: usize, row: &[f64]) -> Result<Self> {
        let mut p = self.transitions.clone();
        p.slice_mut(ndarray::s![h, s, a, ..])
            .assign(&ArrayView1::from(row));
        Self::new(self.initial.clone(), p)
    }

    pub(crate) fn check_table(&self, dim: (usize, usize, usize), what: &str) -> Result<()> {
        if dim != self.table_dim() {
            return Err(Error::ShapeMismatch(format!(
                "{what} has shape {dim:?}, MDP expects {:?}",
                self.table_dim()
            )));
        }
        Ok(())
    }
}

pub(crate) fn single_initial_state(d0: &Array1<f64>) -> Result<usize> {
    let mut found = None;
    for (s, &p) in d0.iter().enumerate() {
        if p > STOCHASTIC_TOL {
            if (p - 1.0).abs() > STOCHASTIC_TOL || found.is_some() {
                return Err(Error::NonDeterministicInitialState);
            }
            found = Some(s);
        }
    }
    found.ok_or(Error::NonDeterministicInitialState)
}

/// Stage-indexed reward table `r[h][s][a] ∈ [-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    values: Array3<f64>,
    pub id: Option<String>,
}

impl RewardFunction {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        for ((h, s, a), &v) in values.indexed_iter() {
            if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::RewardOutOfRange { h, s, a, value: v });
            }
        }
        Ok(Self { values, id: None })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn constant(dim: (usize, usize, usize), c: f64) -> Result<Self> {
        Self::new(Array3::from_elem(dim, c))
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[[h, s, a]]
    }

    /// Identifier for reports: the explicit id, or `r{index}`.
    pub fn label(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| format!("r{index}"))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }
}

/// Rewards linear in a feature map: `r_h(s,a) = ⟨φ(s,a), θ_h⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRewardClass {
    /// `[s][a][k]`, each feature vector with Euclidean norm ≤ 1.
    features: Array3<f64>,
    /// `[h][k]`, each row with Euclidean norm ≤ √d.
    theta: Array2<f64>,
}

impl LinearRewardClass {
    pub fn new(features: Array3<f64>, theta: Array2<f64>) -> Result<Self> {
        let (s, a, d) = features.dim();
        if d == 0 || theta.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "features have dimension {d}, theta has {}",
                theta.ncols()
            )));
        }
        for ss in 0..s {
            for aa in 0..a {
                let norm = features
                    .slice(ndarray::s![ss, aa, ..])
                    .mapv(|x| x * x)
                    .sum()
                    .sqrt();
                if norm > 1.0 + 1e-12 {
                    return Err(Error::FeatureNormTooLarge { s: ss, a: aa, norm });
                }
            }
        }
        let bound = (d as f64).sqrt();
        for (h, row) in theta.axis_iter(Axis(0)).enumerate() {
            let norm = row.mapv(|x| x * x).sum().sqrt();
            if norm > bound + 1e-12 {
                return Err(Error::ThetaNormTooLarge { h, norm });
            }
        }
        Ok(Self { features, theta })
    }

    pub fn dim(&self) -> usize {
        self.features.dim().2
    }

    pub fn features(&self) -> &Array3<f64> {
        &self.features
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn with_theta(&self, theta: Array2<f64>) -> Result<Self> {
        Self::new(self.features.clone(), theta)
    }

    /// Materialise the reward table; fails if any entry leaves [-1, 1].
    pub fn materialize(&self) -> Result<RewardFunction> {
        let (s, a, _) = self.features.dim();
        let h = self.theta.nrows();
        let values = Array3::from_shape_fn((h, s, a), |(hh, ss, aa)| {
            self.features
                .slice(ndarray::s![ss, aa, ..])
                .dot(&self.theta.row(hh))
        });
        RewardFunction::new(values)
    }
}

/// Stage-indexed Markov policy `π[h][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array3<f64>,
}

impl Policy {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (h, s, _) = probs.dim();
        for hh in 0..h {
            for ss in 0..s {
                let row = probs.slice(ndarray::s![hh, ss, ..]);
                if row.iter().any(|&x| x < 0.0 || !x.is_finite())
                    || (row.sum() - 1.0).abs() > STOCHASTIC_TOL
                {
                    return Err(Error::InvalidPolicyRow { h: hh, s: ss });
                }
            }
        }
        Ok(Self { probs })
    }

    /// Deterministic policy from an `[h][s]` action table.
    pub fn deterministic(actions: &Array2<usize>, num_actions: usize) -> Result<Self> {
        let (h, s) = actions.dim();
        let mut probs = Array3::zeros((h, s, num_actions));
        for ((hh, ss), &a) in actions.indexed_iter() {
            if a >= num_actions {
                return Err(Error::IndexOutOfRange(format!("action {a} at ({hh},{ss})")));
            }
            probs[[hh, ss, a]] = 1.0;
        }
        Ok(Self { probs })
    }

    /// Plays `action` everywhere.
    pub fn constant_action(dim: (usize, usize, usize), action: usize) -> Result<Self> {
        Self::deterministic(&Array2::from_elem((dim.0, dim.1), action), dim.2)
    }

    pub fn uniform(dim: (usize, usize, usize)) -> Self {
        Self {
            probs: Array3::from_elem(dim, 1.0 / dim.2 as f64),
        }
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.probs.dim()
    }

    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[[h, s, a]]
    }

    pub fn action_dist(&self, h: usize, s: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(ndarray::s![h, s, ..])
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Action chosen at `(h, s)` if the row is a point mass.
    pub fn action(&self, h: usize, s: usize) -> Option<usize> {
        let row = self.action_dist(h, s);
        row.iter().position(|&p| p == 1.0)
    }
}

/// Set of covered `(s, a, h)` triples, stored as a dense `[h][s][a]` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageSet {
    mask: Array3<bool>,
}

impl CoverageSet {
    pub fn empty(dim: (usize, usize, usize)) -> Self {
        Self {
            mask: Array3::from_elem(dim, false),
        }
    }

    pub fn full(dim: (usize, usize, usize)) -> Self {
        Self {
            mask: Array3::from_elem(dim, true),
        }
    }

    pub fn from_mask(mask: Array3<bool>) -> Self {
        Self { mask }
    }

    /// Build from `(s, a, h)` triples; duplicates collapse.
    pub fn from_triples(
        dim: (usize, usize, usize),
        triples: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self> {
        let mut set = Self::empty(dim);
        for (s, a, h) in triples {
            set.insert(s, a, h)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, s: usize, a: usize, h: usize) -> Result<()> {
        let (hh, ss, aa) = self.mask.dim();
        if h >= hh || s >= ss || a >= aa {
            return Err(Error::IndexOutOfRange(format!("triple ({s},{a},{h})")));
        }
        self.mask[[h, s, a]] = true;
        Ok(())
    }

    pub fn remove(&mut self, s: usize, a: usize, h: usize) {
        self.mask[[h, s, a]] = false;
    }

    pub fn contains(&self, s: usize, a: usize, h: usize) -> bool {
        self.mask[[h, s, a]]
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.mask.dim()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Triples in `(h, s, a)` lexicographic order, reported as `(s, a, h)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.mask
            .indexed_iter()
            .filter(|(_, &b)| b)
            .map(|((h, s, a), _)| (s, a, h))
    }

    pub fn is_subset(&self, other: &CoverageSet) -> bool {
        self.dim() == other.dim()
            && self
                .mask
                .iter()
                .zip(other.mask.iter())
                .all(|(&x, &y)| !x || y)
    }

    pub fn mask(&self) -> &Array3<bool> {
        &self.mask
    }
}
