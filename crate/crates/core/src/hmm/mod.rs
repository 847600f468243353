//! Unsupervised learning of a Gaussian-emission trellis with Baum-Welch, and
//! the alignment that lets learned states carry transmitted-symbol labels.

mod assignment;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcjr::{self, run_messages, EmissionLikelihoods, SoftSymbolOutput, TransitionGraph};
use crate::error::{Error, Result};
use crate::rng;
use crate::trellis::{Emission, TrellisSpec};

pub use assignment::min_cost_assignment;

/// Responsibility below which a state's parameters are left untouched.
const DEGENERATE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaumWelchConfig {
    pub num_states: usize,
    pub max_iters: usize,
    /// Relative log-likelihood improvement regarded as stalled.
    pub loglik_tol: f64,
    /// Consecutive stalled iterations before stopping early.
    pub patience: usize,
    pub num_restarts: usize,
    pub seed: u64,
    pub variance_floor: f64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        BaumWelchConfig {
            num_states: 2,
            max_iters: 1500,
            loglik_tol: 1e-9,
            patience: 10,
            num_restarts: 3,
            seed: 0,
            variance_floor: 1e-6,
        }
    }
}

impl BaumWelchConfig {
    pub fn with_states(num_states: usize) -> Self {
        BaumWelchConfig { num_states, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 {
            return Err(Error::param("Baum-Welch needs at least one state"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if self.num_restarts == 0 {
            return Err(Error::param("num_restarts must be at least 1"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::param("variance floor must be positive"));
        }
        Ok(())
    }
}

/// Best model over all restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedHmm {
    /// Unlabeled trellis (empty alphabet, no state symbols).
    pub trellis: TrellisSpec,
    /// Log-likelihood at every E-step of the winning restart; the last entry
    /// belongs to the returned parameters.
    pub loglik_history: Vec<f64>,
    pub restart: usize,
    pub final_logliks: Vec<f64>,
}

impl LearnedHmm {
    pub fn loglik(&self) -> f64 {
        *self.loglik_history.last().expect("history is never empty")
    }
}

/// Expected sufficient statistics of one E-step. Moments are taken about
/// `center` to keep the one-pass variance well conditioned.
struct Expectations {
    loglik: f64,
    occupancy: Vec<f64>,
    center: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    first: Vec<f64>,
}

fn e_step(
    graph: &TransitionGraph,
    initial: &[f64],
    lik: &EmissionLikelihoods,
    rx: Option<&[f64]>,
) -> Result<Expectations> {
    let q = initial.len();
    let msg = run_messages(graph, initial, lik)?;
    let center = rx.map_or(0.0, |r| r.iter().sum::<f64>() / r.len() as f64);

    let mut occupancy = vec![0.0; q];
    let mut sum = vec![0.0; q];
    let mut sum_sq = vec![0.0; q];
    let mut gamma = vec![0.0; q];
    let mut pairs = vec![0.0; q * q];
    let mut scaled = vec![0.0; q];
    let mut w = vec![0.0; q];
    for t in 0..lik.len() {
        state_posterior(msg.alpha(t), msg.beta(t), &mut gamma);
        match rx {
            Some(r) => {
                let d = r[t] - center;
                for s in 0..q {
                    occupancy[s] += gamma[s];
                    sum[s] += gamma[s] * d;
                    sum_sq[s] += gamma[s] * d * d;
                }
            }
            None => occupancy.iter_mut().zip(&gamma).for_each(|(o, g)| *o += g),
        }
        if t > 0 {
            let a = msg.alpha(t - 1);
            let b = msg.beta(t);
            let row = lik.row(t);
            let inv_c = 1.0 / msg.scale(t);
            for ((v, &ai), (x, (&r, &bj))) in scaled.iter_mut().zip(a).zip(w.iter_mut().zip(row.iter().zip(b))) {
                *v = ai * inv_c;
                *x = r * bj;
            }
            graph.accumulate_pairs(&scaled, &w, &mut pairs);
        }
    }
    let transitions = pairs.chunks_exact(q).map(|r| r.to_vec()).collect();
    let mut first = vec![0.0; q];
    state_posterior(msg.alpha(0), msg.beta(0), &mut first);
    Ok(Expectations { loglik: msg.loglik, occupancy, center, sum, sum_sq, transitions, first })
}

fn state_posterior(alpha: &[f64], beta: &[f64], out: &mut [f64]) {
    let mut sum = 0.0;
    for ((o, a), b) in out.iter_mut().zip(alpha).zip(beta) {
        *o = a * b;
        sum += *o;
    }
    if sum > 0.0 {
        out.iter_mut().for_each(|v| *v /= sum);
    }
}

fn m_step(model: &TrellisSpec, ex: &Expectations, variance_floor: f64) -> TrellisSpec {
    let q = model.num_states;
    let mut next = model.clone();
    for i in 0..q {
        let total: f64 = ex.transitions[i].iter().sum();
        if total > DEGENERATE_MASS {
            next.transitions[i] = ex.transitions[i].iter().map(|v| v / total).collect();
        }
        if ex.occupancy[i] > DEGENERATE_MASS {
            let m = ex.sum[i] / ex.occupancy[i];
            let var = (ex.sum_sq[i] / ex.occupancy[i] - m * m).max(variance_floor);
            next.emissions[i] = Emission::new(ex.center + m, var);
        }
    }
    next.initial_dist = normalized_first(ex);
    next
}

fn normalized_first(ex: &Expectations) -> Vec<f64> {
    let total: f64 = ex.first.iter().sum();
    ex.first.iter().map(|v| v / total).collect()
}

fn gaussian_e_step(model: &TrellisSpec, rx: &[f64]) -> Result<Expectations> {
    let lik = EmissionLikelihoods::gaussian(model, rx)?;
    e_step(&TransitionGraph::new(&model.transitions), &model.initial_dist, &lik, Some(rx))
}

/// One expectation-maximization update of `model` on `rx`.
///
/// Returns the updated model and the log-likelihood of `rx` under the input model.
pub fn em_step(model: &TrellisSpec, rx: &[f64], variance_floor: f64) -> Result<(TrellisSpec, f64)> {
    let ex = gaussian_e_step(model, rx)?;
    Ok((m_step(model, &ex, variance_floor), ex.loglik))
}

/// Uniform rows blended half and half with flat Dirichlet draws.
fn jittered_rows(q: usize, rng: &mut rng::StreamRng) -> Vec<Vec<f64>> {
    let dirichlet = Gamma::new(1.0, 1.0).expect("valid gamma shape");
    (0..q)
        .map(|_| {
            let draw: Vec<f64> = (0..q).map(|_| dirichlet.sample(rng)).collect();
            let s: f64 = draw.iter().sum();
            let row: Vec<f64> = draw.iter().map(|d| 0.5 / q as f64 + 0.5 * d / s).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn initial_model(rx: &[f64], cfg: &BaumWelchConfig, restart: usize) -> Result<TrellisSpec> {
    let q = cfg.num_states;
    let mut rng = rng::stream(cfg.seed, &[rng::purpose::LEARNING, restart as u64]);
    let n = rx.len() as f64;
    let mean = rx.iter().sum::<f64>() / n;
    let var = (rx.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).max(cfg.variance_floor);
    let lo = rx.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let emissions = (0..q)
        .map(|_| {
            let m = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            Emission::new(m, var)
        })
        .collect();
    let transitions = jittered_rows(q, &mut rng);
    TrellisSpec::new(transitions, emissions, Vec::new(), None, vec![1.0 / q as f64; q])
}

/// Repeats `step` (which returns the updated model and the log-likelihood of
/// its input) until the relative gain stays below tolerance for `patience`
/// iterations or the budget runs out. Returns the last evaluated model.
fn iterate<M>(mut model: M, cfg: &BaumWelchConfig, mut step: impl FnMut(&M) -> Result<(M, f64)>) -> Result<(M, Vec<f64>)> {
    let mut history = Vec::new();
    let mut stalled = 0;
    for iter in 0..cfg.max_iters {
        let (next, ll) = step(&model)?;
        if let Some(&prev) = history.last() {
            let gain = (ll - prev) / f64::abs(prev).max(f64::MIN_POSITIVE);
            stalled = if gain < cfg.loglik_tol { stalled + 1 } else { 0 };
        }
        history.push(ll);
        if stalled >= cfg.patience || iter + 1 == cfg.max_iters {
            break;
        }
        model = next;
    }
    Ok((model, history))
}

/// Best restart by final log-likelihood: `(restart, model, history, finals)`.
fn best_restart<M>(runs: Vec<Result<(M, Vec<f64>)>>) -> Result<(usize, M, Vec<f64>, Vec<f64>)> {
    let mut best: Option<(usize, M, Vec<f64>)> = None;
    let mut finals = Vec::with_capacity(runs.len());
    let mut first_err = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok((model, history)) => {
                let ll = *history.last().expect("at least one E-step");
                finals.push(ll);
                if best.as_ref().is_none_or(|(_, _, h)| ll > *h.last().unwrap()) {
                    best = Some((r, model, history));
                }
            }
            Err(e) => {
                finals.push(f64::NAN);
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((r, m, h)) => Ok((r, m, h, finals)),
        None => Err(first_err.expect("no restart succeeded")),
    }
}

/// Fits a `cfg.num_states`-state Gaussian HMM to `rx` by expectation-maximization.
///
/// Each restart draws means uniformly from the sample range, starts every
/// variance at the sample variance and blends uniform transition rows with a
/// Dirichlet draw. The restart with the highest final log-likelihood wins.
pub fn baum_welch(rx: &[f64], cfg: &BaumWelchConfig) -> Result<LearnedHmm> {
    cfg.validate()?;
    if rx.is_empty() {
        return Err(Error::input("cannot learn from an empty sequence"));
    }
    if let Some(t) = rx.iter().position(|y| !y.is_finite()) {
        return Err(Error::input(format!("training sample {t} is not finite")));
    }
    let runs: Vec<_> = (0..cfg.num_restarts)
        .into_par_iter()
        .map(|r| {
            let init = initial_model(rx, cfg, r)?;
            iterate(init, cfg, |m| em_step(m, rx, cfg.variance_floor))
        })
        .collect();
    let (restart, trellis, loglik_history, final_logliks) = best_restart(runs)?;
    Ok(LearnedHmm { trellis, loglik_history, restart, final_logliks })
}

/// Transition matrix and initial law learned with fixed emission likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedChain {
    pub transitions: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    pub loglik_history: Vec<f64>,
    pub restart: usize,
}

/// Baum-Welch over the transition matrix alone: the emission likelihoods
/// `lik` stay fixed and only `p(s_t | s_t-1)` and the initial law are
/// re-estimated. Restarts and stopping follow `cfg`.
pub fn learn_transitions(lik: &EmissionLikelihoods, cfg: &BaumWelchConfig) -> Result<LearnedChain> {
    cfg.validate()?;
    if lik.is_empty() {
        return Err(Error::input("cannot learn from an empty sequence"));
    }
    let q = lik.num_states();
    let runs: Vec<_> = (0..cfg.num_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(cfg.seed, &[rng::purpose::LEARNING, r as u64]);
            let init = (jittered_rows(q, &mut rng), vec![1.0 / q as f64; q]);
            iterate(init, cfg, |(tr, init)| {
                let ex = e_step(&TransitionGraph::new(tr), init, lik, None)?;
                let mut next = tr.clone();
                for (row, counts) in next.iter_mut().zip(&ex.transitions) {
                    let total: f64 = counts.iter().sum();
                    if total > DEGENERATE_MASS {
                        *row = counts.iter().map(|v| v / total).collect();
                    }
                }
                Ok(((next, normalized_first(&ex)), ex.loglik))
            })
        })
        .collect();
    let (restart, (transitions, initial_dist), loglik_history, _) = best_restart(runs)?;
    Ok(LearnedChain { transitions, initial_dist, loglik_history, restart })
}

/// Learned-state to reference-state matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAlignment {
    /// `permutation[learned] = reference`.
    pub permutation: Vec<usize>,
    pub assignment_cost: f64,
}

impl StateAlignment {
    /// `order[reference] = learned`, for [`TrellisSpec::permuted`].
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (k, &r) in self.permutation.iter().enumerate() {
            inv[r] = k;
        }
        inv
    }
}

/// Pairs learned and reference states minimizing
/// `sum (mean difference)^2 + (log-variance difference)^2`.
pub fn align_states(learned: &TrellisSpec, reference: &TrellisSpec) -> Result<StateAlignment> {
    if learned.num_states != reference.num_states {
        return Err(Error::param(format!(
            "cannot align {} learned states with {} reference states",
            learned.num_states, reference.num_states
        )));
    }
    let cost: Vec<Vec<f64>> = learned
        .emissions
        .iter()
        .map(|a| reference.emissions.iter().map(|b| emission_cost(a, b)).collect())
        .collect();
    let permutation = min_cost_assignment(&cost);
    let assignment_cost = permutation.iter().enumerate().map(|(k, &r)| cost[k][r]).sum();
    Ok(StateAlignment { permutation, assignment_cost })
}

fn emission_cost(a: &Emission, b: &Emission) -> f64 {
    let dm = a.mean - b.mean;
    let dv = a.variance.ln() - b.variance.ln();
    dm * dm + dv * dv
}

/// Gives every learned state the symbol label of the reference state whose
/// emission is closest, by the same cost as [`align_states`]. Unlike the
/// bijective alignment this allows any number of learned states per symbol.
/// Transitions and emissions stay as learned.
pub fn label_states(learned: &TrellisSpec, reference: &TrellisSpec) -> Result<TrellisSpec> {
    let ref_labels = reference.labels()?;
    let labels = learned
        .emissions
        .iter()
        .map(|a| {
            let (best, _) = reference
                .emissions
                .iter()
                .enumerate()
                .map(|(r, b)| (r, emission_cost(a, b)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            ref_labels[best]
        })
        .collect();
    let mut out = learned.clone();
    out.alphabet = reference.alphabet.clone();
    out.state_symbols = Some(labels);
    out.validate()?;
    Ok(out)
}

/// BCJR-HMM detector: a learned, symbol-labeled trellis.
#[derive(Debug, Clone)]
pub struct HmmDetector {
    pub learned: LearnedHmm,
    pub alignment: StateAlignment,
    pub trellis: TrellisSpec,
}

impl HmmDetector {
    /// Learns on `rx_train` with `reference.num_states` states and labels the
    /// result against `reference`. Detection starts from the stationary law of
    /// the learned chain: the fitted initial law describes the first training
    /// sample only and is usually one-hot.
    pub fn train(rx_train: &[f64], cfg: &BaumWelchConfig, reference: &TrellisSpec) -> Result<Self> {
        let cfg = BaumWelchConfig { num_states: reference.num_states, ..cfg.clone() };
        let learned = baum_welch(rx_train, &cfg)?;
        let alignment = align_states(&learned.trellis, reference)?;
        let mut trellis = label_states(&learned.trellis, reference)?;
        trellis.initial_dist = trellis.stationary()?;
        Ok(HmmDetector { learned, alignment, trellis })
    }

    pub fn detect(&self, rx: &[f64]) -> Result<SoftSymbolOutput> {
        bcjr::detect(&self.trellis, rx)
    }
}

/// Learns on `rx_train`, then detects `rx_test` with the learned trellis.
pub fn hmm_detect(
    rx_train: &[f64],
    rx_test: &[f64],
    cfg: &BaumWelchConfig,
    reference: &TrellisSpec,
) -> Result<SoftSymbolOutput> {
    HmmDetector::train(rx_train, cfg, reference)?.detect(rx_test)
}
