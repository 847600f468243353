//! Finite-state trellis model shared by detection and learning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variances below this are clamped inside the Gaussian density.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-10;

/// Gaussian emission parameters of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub mean: f64,
    pub variance: f64,
}

impl Emission {
    pub fn new(mean: f64, variance: f64) -> Self {
        Emission { mean, variance }
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let var = self.variance.max(VARIANCE_FLOOR);
        let d = y - self.mean;
        -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }
}

/// A hidden Markov model over `num_states` trellis states.
///
/// `transitions[i][j]` is the probability of moving from state `i` to state
/// `j`. When the model is tied to a constellation, `state_symbols[j]` is the
/// index (into `alphabet`) of the transmitted symbol that drives every
/// transition *into* state `j`; the per-symbol transition sets are derived from
/// it by [`TrellisSpec::symbol_map`]. Learned models start out unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrellisSpec {
    pub num_states: usize,
    pub transitions: Vec<Vec<f64>>,
    pub emissions: Vec<Emission>,
    pub alphabet: Vec<f64>,
    pub state_symbols: Option<Vec<usize>>,
    pub initial_dist: Vec<f64>,
}

impl TrellisSpec {
    /// Builds and validates a trellis.
    pub fn new(
        transitions: Vec<Vec<f64>>,
        emissions: Vec<Emission>,
        alphabet: Vec<f64>,
        state_symbols: Option<Vec<usize>>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let spec = TrellisSpec {
            num_states: transitions.len(),
            transitions,
            emissions,
            alphabet,
            state_symbols,
            initial_dist,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.num_states;
        if q == 0 {
            return Err(Error::param("trellis needs at least one state"));
        }
        check_stochastic(&self.transitions)?;
        if self.transitions.len() != q {
            return Err(Error::param("transition matrix size does not match num_states"));
        }
        if self.emissions.len() != q {
            return Err(Error::param(format!(
                "expected {q} emissions, got {}",
                self.emissions.len()
            )));
        }
        for (s, e) in self.emissions.iter().enumerate() {
            if !(e.variance > 0.0) || !e.mean.is_finite() || !e.variance.is_finite() {
                return Err(Error::param(format!(
                    "state {s} has invalid emission (mean {}, variance {})",
                    e.mean, e.variance
                )));
            }
        }
        check_distribution(&self.initial_dist, q, "initial distribution")?;
        if let Some(labels) = &self.state_symbols {
            if labels.len() != q {
                return Err(Error::param("state symbol labels do not cover every state"));
            }
            if let Some(&bad) = labels.iter().find(|&&x| x >= self.alphabet.len()) {
                return Err(Error::param(format!(
                    "state symbol index {bad} outside alphabet of size {}",
                    self.alphabet.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_labeled(&self) -> bool {
        self.state_symbols.is_some()
    }

    /// Symbol labels of each state, or a contract error for unlabeled models.
    pub fn labels(&self) -> Result<&[usize]> {
        self.state_symbols.as_deref().ok_or_else(|| {
            Error::ContractViolation("trellis has no state-to-symbol labeling".into())
        })
    }

    /// Nonzero transitions as `(prev, next)` pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (i, row) in self.transitions.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    /// For each alphabet symbol, the `(prev, next)` transitions it drives.
    ///
    /// The sets are disjoint and together cover the support of the transition
    /// matrix.
    pub fn symbol_map(&self) -> Result<Vec<Vec<(usize, usize)>>> {
        let labels = self.labels()?;
        let mut map = vec![Vec::new(); self.alphabet.len()];
        for (i, j) in self.edges() {
            map[labels[j]].push((i, j));
        }
        Ok(map)
    }

    /// Reorders states so that new state `k` is old state `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<TrellisSpec> {
        let q = self.num_states;
        if order.len() != q || !is_permutation(order) {
            return Err(Error::param("state reordering must be a permutation"));
        }
        let transitions = order
            .iter()
            .map(|&i| order.iter().map(|&j| self.transitions[i][j]).collect())
            .collect();
        Ok(TrellisSpec {
            num_states: q,
            transitions,
            emissions: order.iter().map(|&i| self.emissions[i]).collect(),
            alphabet: self.alphabet.clone(),
            state_symbols: self
                .state_symbols
                .as_ref()
                .map(|l| order.iter().map(|&i| l[i]).collect()),
            initial_dist: order.iter().map(|&i| self.initial_dist[i]).collect(),
        })
    }

    /// Stationary distribution of the transition matrix.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        stationary_distribution(&self.transitions)
    }
}

pub(crate) fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= order.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::param(format!("{what} has length {} (expected {len})", p.len())));
    }
    if p.iter().any(|&v| !(0.0..=1.0 + ROW_SUM_TOL).contains(&v)) {
        return Err(Error::param(format!("{what} has entries outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::param(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Checks that `m` is square and row-stochastic within 1e-10.
pub fn check_stochastic(m: &[Vec<f64>]) -> Result<()> {
    let q = m.len();
    if q == 0 {
        return Err(Error::param("empty transition matrix"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != q {
            return Err(Error::param(format!("transition row {i} has length {}", row.len())));
        }
        check_distribution(row, q, &format!("transition row {i}"))?;
    }
    Ok(())
}

/// Stationary law `pi` of a row-stochastic matrix (`pi P = pi`, `sum pi = 1`).
///
/// Power iteration from the uniform vector on the lazy chain `(P + I) / 2`,
/// which shares every stationary law of `P` but is aperiodic. Reducible chains
/// yield the limit reached from the uniform start.
pub fn stationary_distribution(transitions: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_stochastic(transitions)?;
    let q = transitions.len();
    let mut pi = vec![1.0 / q as f64; q];
    let mut next = vec![0.0; q];
    for _ in 0..10_000_000 {
        next.fill(0.0);
        for (i, row) in transitions.iter().enumerate() {
            let w = pi[i];
            for (j, &p) in row.iter().enumerate() {
                next[j] += w * p;
            }
        }
        // residual of the original chain: |pi P - pi|_1
        let residual: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        for (n, p) in next.iter_mut().zip(&pi) {
            *n = 0.5 * (*n + p);
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        std::mem::swap(&mut pi, &mut next);
        if residual < 1e-12 {
            break;
        }
    }
    Ok(pi)
}
