//! Test-only oracles, independent of the library's inference code paths.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use trellis_detect::trellis::{Emission, TrellisSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_pdf(y: f64, mean: f64, var: f64) -> f64 {
    (-(y - mean) * (y - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Exact marginals by summing the joint factorization over every state path.
pub struct Enumerated {
    pub loglik: f64,
    /// `[t][s]`
    pub state: Vec<Vec<f64>>,
    /// `[t][i][j]` for `t >= 1`; index 0 unused.
    pub pair: Vec<Vec<Vec<f64>>>,
    /// `[t][symbol index]`, labeling each step by the symbol of `s_t`.
    pub symbol: Vec<Vec<f64>>,
}

pub fn enumerate_paths(spec: &TrellisSpec, y: &[f64]) -> Enumerated {
    let q = spec.num_states;
    let t_len = y.len();
    let m = spec.alphabet.len();
    let mut state = vec![vec![0.0; q]; t_len];
    let mut pair = vec![vec![vec![0.0; q]; q]; t_len];
    let mut symbol = vec![vec![0.0; m]; t_len];
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    let count = q.pow(t_len as u32);
    for code in 0..count {
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % q;
            c /= q;
        }
        let e = |t: usize| {
            let em: Emission = spec.emissions[path[t]];
            gauss_pdf(y[t], em.mean, em.variance)
        };
        let mut w = spec.initial_dist[path[0]] * e(0);
        for t in 1..t_len {
            w *= spec.transitions[path[t - 1]][path[t]] * e(t);
        }
        if w == 0.0 {
            continue;
        }
        total += w;
        for t in 0..t_len {
            state[t][path[t]] += w;
            if let Some(labels) = &spec.state_symbols {
                symbol[t][labels[path[t]]] += w;
            }
            if t > 0 {
                pair[t][path[t - 1]][path[t]] += w;
            }
        }
    }
    for t in 0..t_len {
        state[t].iter_mut().for_each(|v| *v /= total);
        symbol[t].iter_mut().for_each(|v| *v /= total);
        for row in pair[t].iter_mut() {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Enumerated { loglik: total.ln(), state, pair, symbol }
}

/// Random labeled trellis with `q` states, sparse-ish transitions and a BPSK alphabet.
pub fn random_trellis(r: &mut ChaCha8Rng, q: usize) -> TrellisSpec {
    let transitions = (0..q)
        .map(|_| {
            let mut row: Vec<f64> = (0..q)
                .map(|_| if r.random::<f64>() < 0.25 { 0.0 } else { r.random::<f64>() + 0.05 })
                .collect();
            if row.iter().all(|&v| v == 0.0) {
                row[r.random_range(0..q)] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let emissions = (0..q)
        .map(|_| Emission::new(r.random_range(-2.0..2.0), r.random_range(0.2..2.0)))
        .collect();
    let labels = (0..q).map(|_| r.random_range(0..2)).collect();
    let mut init: Vec<f64> = (0..q).map(|_| r.random::<f64>() + 0.01).collect();
    let s: f64 = init.iter().sum();
    init.iter_mut().for_each(|v| *v /= s);
    TrellisSpec::new(transitions, emissions, vec![-1.0, 1.0], Some(labels), init).unwrap()
}

/// Gaussian tail function Q(x) = P(N(0,1) > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Draws a state path and observations from `spec`.
pub fn sample_hmm(spec: &TrellisSpec, len: usize, r: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let pick = |p: &[f64], r: &mut ChaCha8Rng| {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (k, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return k;
            }
        }
        p.len() - 1
    };
    let mut states = Vec::with_capacity(len);
    let mut y = Vec::with_capacity(len);
    let mut s = pick(&spec.initial_dist, r);
    for t in 0..len {
        if t > 0 {
            s = pick(&spec.transitions[s], r);
        }
        let e = spec.emissions[s];
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, r);
        states.push(s);
        y.push(e.mean + e.variance.sqrt() * z);
    }
    (states, y)
}
