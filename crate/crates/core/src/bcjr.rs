//! Scaled forward-backward (BCJR) inference over a [`TrellisSpec`].
//!
//! The recursions run in the probability domain with per-step normalization:
//! `alpha_t` is rescaled to sum to one, the normalizers `c_t` are accumulated
//! in log form, and `beta_t` is divided by the same `c_{t+1}`. Emission
//! likelihoods are stored with a per-step log offset so that a single step can
//! span any dynamic range without underflow.

use crate::error::{Error, Result};
use crate::trellis::{TrellisSpec, VARIANCE_FLOOR};

/// Smallest log ratio to the row maximum kept in a likelihood row.
const MIN_LOG_RATIO: f64 = -300.0;
/// Normalized messages below this are set to zero.
const FLUSH: f64 = 1e-150;

/// Emission likelihoods `p(y_t | s)` for every step and state.
///
/// Row `t` holds values relative to `exp(log_scale[t])`; every row's maximum
/// is one unless the whole row is zero. Positive ratios below `exp(-300)` are
/// raised to that floor so the recursions never touch subnormal numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionLikelihoods {
    num_states: usize,
    values: Vec<f64>,
    log_scale: Vec<f64>,
}

impl EmissionLikelihoods {
    /// Gaussian likelihoods of `rx` under the trellis emissions.
    pub fn gaussian(trellis: &TrellisSpec, rx: &[f64]) -> Result<Self> {
        let q = trellis.num_states;
        // (log normalizer, 1 / (2 var)) per state
        let consts: Vec<(f64, f64)> = trellis
            .emissions
            .iter()
            .map(|e| {
                let var = e.variance.max(VARIANCE_FLOOR);
                (-0.5 * (2.0 * std::f64::consts::PI * var).ln(), 0.5 / var)
            })
            .collect();
        Self::from_log_fn(rx.len(), q, |t, logs| {
            let y = rx[t];
            if !y.is_finite() {
                return Err(Error::input(format!("received sample {t} is not finite")));
            }
            for ((l, e), &(norm, inv2v)) in logs.iter_mut().zip(&trellis.emissions).zip(&consts) {
                let d = y - e.mean;
                *l = norm - d * d * inv2v;
            }
            Ok(())
        })
    }

    /// Builds rows from log-likelihoods written by `fill(t, row)`.
    pub fn from_log_fn(
        len: usize,
        num_states: usize,
        mut fill: impl FnMut(usize, &mut [f64]) -> Result<()>,
    ) -> Result<Self> {
        let mut values = vec![0.0; len * num_states];
        let mut log_scale = vec![0.0; len];
        for (t, row) in values.chunks_mut(num_states.max(1)).enumerate().take(len) {
            fill(t, row)?;
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max.is_nan() || max == f64::INFINITY {
                return Err(Error::input(format!("log-likelihood at step {t} is not finite")));
            }
            if max == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            for v in row.iter_mut() {
                let d = *v - max;
                *v = if d == f64::NEG_INFINITY { 0.0 } else { d.max(MIN_LOG_RATIO).exp() };
            }
            log_scale[t] = max;
        }
        Ok(EmissionLikelihoods { num_states, values, log_scale })
    }

    /// Builds rows from plain nonnegative likelihood values (`len x num_states`, row-major).
    pub fn from_values(num_states: usize, values: Vec<f64>) -> Result<Self> {
        if num_states == 0 || values.len() % num_states != 0 {
            return Err(Error::input("likelihood matrix shape does not match the state count"));
        }
        let len = values.len() / num_states;
        let mut out = EmissionLikelihoods { num_states, values, log_scale: vec![0.0; len] };
        for t in 0..len {
            let row = &mut out.values[t * num_states..(t + 1) * num_states];
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::input(format!("likelihoods at step {t} must be finite and nonnegative")));
            }
            let max = row.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                let floor = MIN_LOG_RATIO.exp();
                row.iter_mut().for_each(|v| {
                    if *v > 0.0 {
                        *v = (*v / max).max(floor);
                    }
                });
                out.log_scale[t] = max.ln();
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.log_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scale.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Scaled row `t`; multiply by `exp(log_scale(t))` for true values.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.num_states..(t + 1) * self.num_states]
    }

    pub fn log_scale(&self, t: usize) -> f64 {
        self.log_scale[t]
    }

    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.row(t)[s] * self.log_scale[t].exp()
    }
}

/// Transition matrix prepared for the recursions: edge lists, plus dense
/// row-major copies of the matrix and its transpose when at least three
/// quarters of the entries are nonzero.
#[derive(Debug, Clone)]
pub(crate) struct TransitionGraph {
    pub q: usize,
    pub preds: Vec<Vec<(usize, f64)>>,
    pub succs: Vec<Vec<(usize, f64)>>,
    pub edges: Vec<(usize, usize)>,
    dense: Option<(Vec<f64>, Vec<f64>)>,
}

impl TransitionGraph {
    pub fn new(transitions: &[Vec<f64>]) -> Self {
        let q = transitions.len();
        let mut preds = vec![Vec::new(); q];
        let mut succs = vec![Vec::new(); q];
        let mut edges = Vec::new();
        for (i, row) in transitions.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    preds[j].push((i, p));
                    succs[i].push((j, p));
                    edges.push((i, j));
                }
            }
        }
        let dense = (4 * edges.len() >= 3 * q * q).then(|| {
            let m: Vec<f64> = transitions.iter().flatten().copied().collect();
            let t = (0..q * q).map(|k| m[(k % q) * q + k / q]).collect();
            (m, t)
        });
        TransitionGraph { q, preds, succs, edges, dense }
    }

    /// `out[j] = sum_i prev[i] p(j | i)`.
    pub fn push_forward(&self, prev: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match &self.dense {
            Some((m, _)) => {
                for (&a, row) in prev.iter().zip(m.chunks_exact(self.q)) {
                    if a != 0.0 {
                        out.iter_mut().zip(row).for_each(|(o, p)| *o += a * p);
                    }
                }
            }
            None => {
                for (o, preds) in out.iter_mut().zip(&self.preds) {
                    *o = preds.iter().map(|&(i, p)| prev[i] * p).sum();
                }
            }
        }
    }

    /// `out[i] = sum_j p(j | i) w[j]`.
    pub fn pull_back(&self, w: &[f64], out: &mut [f64]) {
        match &self.dense {
            Some((_, t)) => {
                out.fill(0.0);
                for (&v, col) in w.iter().zip(t.chunks_exact(self.q)) {
                    if v != 0.0 {
                        out.iter_mut().zip(col).for_each(|(o, p)| *o += v * p);
                    }
                }
            }
            None => {
                for (o, succs) in out.iter_mut().zip(&self.succs) {
                    *o = succs.iter().map(|&(j, p)| p * w[j]).sum();
                }
            }
        }
    }

    /// `counts[i * q + j] += a[i] p(j | i) w[j]`.
    pub fn accumulate_pairs(&self, a: &[f64], w: &[f64], counts: &mut [f64]) {
        let q = self.q;
        match &self.dense {
            Some((m, _)) => {
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    let row = &m[i * q..(i + 1) * q];
                    let out = &mut counts[i * q..(i + 1) * q];
                    for ((o, p), v) in out.iter_mut().zip(row).zip(w) {
                        *o += ai * p * v;
                    }
                }
            }
            None => {
                for (i, succs) in self.succs.iter().enumerate() {
                    let ai = a[i];
                    if ai == 0.0 {
                        continue;
                    }
                    for &(j, p) in succs {
                        counts[i * q + j] += ai * p * w[j];
                    }
                }
            }
        }
    }
}

/// Normalized forward and scaled backward messages.
#[derive(Debug, Clone)]
pub(crate) struct Messages {
    pub q: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Forward normalizers relative to the scaled likelihood rows.
    pub c: Vec<f64>,
    pub loglik: f64,
    pub backward_loglik: f64,
}

impl Messages {
    pub fn alpha(&self, t: usize) -> &[f64] {
        &self.alpha[t * self.q..(t + 1) * self.q]
    }

    pub fn beta(&self, t: usize) -> &[f64] {
        &self.beta[t * self.q..(t + 1) * self.q]
    }

    /// Normalizer of step `t` relative to the scaled likelihood rows.
    pub fn scale(&self, t: usize) -> f64 {
        self.c[t]
    }
}

pub(crate) fn run_messages(
    graph: &TransitionGraph,
    initial: &[f64],
    lik: &EmissionLikelihoods,
) -> Result<Messages> {
    let q = initial.len();
    let len = lik.len();
    if len == 0 {
        return Err(Error::input("received sequence is empty"));
    }
    if lik.num_states() != q {
        return Err(Error::param(format!(
            "likelihoods cover {} states but the trellis has {q}",
            lik.num_states()
        )));
    }
    let mut alpha = vec![0.0; len * q];
    let mut c = vec![0.0; len];
    let mut log_c = vec![0.0; len];

    let b0 = lik.row(0);
    let mut sum = 0.0;
    for s in 0..q {
        let v = initial[s] * b0[s];
        alpha[s] = v;
        sum += v;
    }
    normalize_step(&mut alpha[..q], sum, 0)?;
    c[0] = sum;
    log_c[0] = sum.ln() + lik.log_scale(0);

    for t in 1..len {
        let (done, rest) = alpha.split_at_mut(t * q);
        let prev = &done[(t - 1) * q..];
        let cur = &mut rest[..q];
        let b = lik.row(t);
        graph.push_forward(prev, cur);
        let mut sum = 0.0;
        for (v, &bj) in cur.iter_mut().zip(b) {
            *v *= bj;
            sum += *v;
        }
        normalize_step(cur, sum, t)?;
        flush(cur, FLUSH);
        c[t] = sum;
        log_c[t] = sum.ln() + lik.log_scale(t);
    }
    let loglik: f64 = log_c.iter().sum();

    let mut beta = vec![0.0; len * q];
    beta[(len - 1) * q..].fill(1.0);
    let mut w = vec![0.0; q];
    for t in (0..len - 1).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * q);
        let next = &tail[..q];
        let cur = &mut head[t * q..];
        let b = lik.row(t + 1);
        let inv_c = 1.0 / c[t + 1];
        for ((w, &bj), &n) in w.iter_mut().zip(b).zip(next) {
            *w = bj * n * inv_c;
        }
        graph.pull_back(&w, cur);
        let max = cur.iter().cloned().fold(0.0, f64::max);
        flush(cur, max * FLUSH);
    }
    // log p(y) from the backward side: sum_s p(s) p(y_1|s) beta_1(s)
    let start: f64 = (0..q).map(|s| initial[s] * b0[s] * beta[s]).sum();
    let backward_loglik = start.ln() + lik.log_scale(0) + log_c[1..].iter().sum::<f64>();

    Ok(Messages { q, alpha, beta, c, loglik, backward_loglik })
}

fn flush(row: &mut [f64], below: f64) {
    for v in row.iter_mut() {
        if *v < below {
            *v = 0.0;
        }
    }
}

fn normalize_step(row: &mut [f64], sum: f64, step: usize) -> Result<()> {
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateLikelihood { step });
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
    Ok(())
}

/// Which optional outputs [`forward_backward_with`] should materialize.
#[derive(Debug, Clone, Copy, Default)]
pub struct FbOptions {
    pub pair_posteriors: bool,
}

/// Pairwise posteriors `p(s_{t-1}, s_t | y)` over the nonzero transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPosteriors {
    pub edges: Vec<(usize, usize)>,
    /// `(T-1) x edges` row-major; row `k` belongs to the step pair `(k, k+1)`.
    pub values: Vec<f64>,
}

impl PairPosteriors {
    /// Posteriors of every edge for the transition into step `t >= 1`.
    pub fn step(&self, t: usize) -> &[f64] {
        let e = self.edges.len();
        &self.values[(t - 1) * e..t * e]
    }
}

/// Output of forward-backward inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub num_states: usize,
    /// `T x Q` row-major `p(s_t | y_1..y_T)`.
    pub state_post: Vec<f64>,
    pub pair_post: Option<PairPosteriors>,
    /// `log p(y_1..y_T)` accumulated from the forward normalizers.
    pub loglik: f64,
    /// The same quantity evaluated through the backward messages.
    pub backward_loglik: f64,
}

impl PosteriorGrid {
    pub fn len(&self) -> usize {
        self.state_post.len() / self.num_states
    }

    pub fn is_empty(&self) -> bool {
        self.state_post.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.state_post[t * self.num_states..(t + 1) * self.num_states]
    }
}

/// Forward-backward with Gaussian emissions from the trellis.
pub fn forward_backward(trellis: &TrellisSpec, rx: &[f64]) -> Result<PosteriorGrid> {
    let lik = EmissionLikelihoods::gaussian(trellis, rx)?;
    forward_backward_with(trellis, &lik, FbOptions { pair_posteriors: true })
}

/// Forward-backward using the trellis transitions and arbitrary likelihoods.
pub fn forward_backward_with(
    trellis: &TrellisSpec,
    lik: &EmissionLikelihoods,
    opts: FbOptions,
) -> Result<PosteriorGrid> {
    let graph = TransitionGraph::new(&trellis.transitions);
    let msg = run_messages(&graph, &trellis.initial_dist, lik)?;
    let q = trellis.num_states;
    let len = lik.len();

    let mut state_post = vec![0.0; len * q];
    for t in 0..len {
        let row = &mut state_post[t * q..(t + 1) * q];
        let mut sum = 0.0;
        for ((r, a), b) in row.iter_mut().zip(msg.alpha(t)).zip(msg.beta(t)) {
            *r = a * b;
            sum += *r;
        }
        normalize_step(row, sum, t)?;
    }

    let pair_post = opts.pair_posteriors.then(|| {
        let e = graph.edges.len();
        let mut values = vec![0.0; len.saturating_sub(1) * e];
        let probs: Vec<f64> = graph.edges.iter().map(|&(i, j)| trellis.transitions[i][j]).collect();
        for t in 1..len {
            let a = msg.alpha(t - 1);
            let b = msg.beta(t);
            let lt = lik.row(t);
            let inv_c = 1.0 / msg.scale(t);
            let row = &mut values[(t - 1) * e..t * e];
            let mut sum = 0.0;
            for (k, &(i, j)) in graph.edges.iter().enumerate() {
                let v = a[i] * probs[k] * lt[j] * b[j] * inv_c;
                row[k] = v;
                sum += v;
            }
            // exact normalization: the pair posteriors of one step sum to one
            row.iter_mut().for_each(|v| *v /= sum);
        }
        PairPosteriors { edges: graph.edges.clone(), values }
    });

    Ok(PosteriorGrid {
        num_states: q,
        state_post,
        pair_post,
        loglik: msg.loglik,
        backward_loglik: msg.backward_loglik,
    })
}

/// Per-symbol posteriors over the constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSymbolOutput {
    pub alphabet: Vec<f64>,
    /// `T x |X|` row-major symbol posteriors.
    pub probs: Vec<f64>,
    /// `log p(larger symbol) / p(smaller symbol)` for binary alphabets.
    pub llrs: Option<Vec<f64>>,
}

/// LLR magnitude cap; keeps saturated decisions finite.
pub const LLR_LIMIT: f64 = 700.0;

impl SoftSymbolOutput {
    /// Builds the output from unnormalized per-symbol masses (`T x |X|`).
    fn from_masses(alphabet: Vec<f64>, mut masses: Vec<f64>) -> Result<Self> {
        let m = alphabet.len();
        let llrs = (m == 2).then(|| {
            let (lo, hi) = if alphabet[0] <= alphabet[1] { (0, 1) } else { (1, 0) };
            masses
                .chunks(2)
                .map(|w| {
                    let num = w[hi].max(f64::MIN_POSITIVE).ln();
                    let den = w[lo].max(f64::MIN_POSITIVE).ln();
                    (num - den).clamp(-LLR_LIMIT, LLR_LIMIT)
                })
                .collect()
        });
        for (t, row) in masses.chunks_mut(m).enumerate() {
            let sum: f64 = row.iter().sum();
            normalize_step(row, sum, t)?;
        }
        Ok(SoftSymbolOutput { alphabet, probs: masses, llrs })
    }

    /// Symbol posteriors obtained by summing state posteriors by state label.
    ///
    /// Equivalent to [`symbol_posteriors`] because every transition is
    /// labeled by its destination state, and needs no pairwise posteriors.
    pub fn from_state_posteriors(grid: &PosteriorGrid, trellis: &TrellisSpec) -> Result<Self> {
        let labels = trellis.labels()?;
        let m = trellis.alphabet.len();
        let mut masses = vec![0.0; grid.len() * m];
        for t in 0..grid.len() {
            for (s, p) in grid.state(t).iter().enumerate() {
                masses[t * m + labels[s]] += p;
            }
        }
        Self::from_masses(trellis.alphabet.clone(), masses)
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn symbol(&self, t: usize) -> &[f64] {
        let m = self.alphabet.len();
        &self.probs[t * m..(t + 1) * m]
    }
}

/// Symbol posteriors from the pairwise posteriors: the mass of every
/// transition driven by a symbol is credited to that symbol. The first step has
/// no incoming transition and uses the state labels of `s_1` instead.
pub fn symbol_posteriors(grid: &PosteriorGrid, trellis: &TrellisSpec) -> Result<SoftSymbolOutput> {
    let pairs = grid.pair_post.as_ref().ok_or_else(|| {
        Error::ContractViolation("symbol posteriors need pairwise posteriors".into())
    })?;
    let labels = trellis.labels()?;
    let m = trellis.alphabet.len();
    let map = trellis.symbol_map()?;
    let edge_index: std::collections::HashMap<(usize, usize), usize> =
        pairs.edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
    let by_symbol: Vec<Vec<usize>> = map
        .iter()
        .map(|set| set.iter().map(|e| edge_index[e]).collect())
        .collect();

    let len = grid.len();
    let mut masses = vec![0.0; len * m];
    for (s, p) in grid.state(0).iter().enumerate() {
        masses[labels[s]] += p;
    }
    for t in 1..len {
        let step = pairs.step(t);
        for (x, edges) in by_symbol.iter().enumerate() {
            masses[t * m + x] = edges.iter().map(|&k| step[k]).sum();
        }
    }
    SoftSymbolOutput::from_masses(trellis.alphabet.clone(), masses)
}

/// Symbol-wise MAP decisions; ties go to the smallest symbol value.
pub fn map_detect(soft: &SoftSymbolOutput) -> Vec<f64> {
    let m = soft.alphabet.len();
    soft.probs
        .chunks(m)
        .map(|row| {
            let mut best = 0;
            for k in 1..m {
                let better = row[k] > row[best]
                    || (row[k] == row[best] && soft.alphabet[k] < soft.alphabet[best]);
                if better {
                    best = k;
                }
            }
            soft.alphabet[best]
        })
        .collect()
}

/// Gaussian forward-backward followed by symbol posteriors.
pub fn detect(trellis: &TrellisSpec, rx: &[f64]) -> Result<SoftSymbolOutput> {
    let lik = EmissionLikelihoods::gaussian(trellis, rx)?;
    detect_with(trellis, &lik)
}

/// Forward-backward with the given likelihoods followed by symbol posteriors.
pub fn detect_with(trellis: &TrellisSpec, lik: &EmissionLikelihoods) -> Result<SoftSymbolOutput> {
    let grid = forward_backward_with(trellis, lik, FbOptions::default())?;
    SoftSymbolOutput::from_state_posteriors(&grid, trellis)
}
