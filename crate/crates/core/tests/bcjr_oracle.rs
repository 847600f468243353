mod common;

use common::{enumerate_paths, random_trellis, rng};
use proptest::prelude::*;
use rand::Rng;
use trellis_detect::bcjr::{
    forward_backward, forward_backward_with, symbol_posteriors, EmissionLikelihoods, FbOptions,
    SoftSymbolOutput,
};

fn random_instance(seed: u64) -> (trellis_detect::trellis::TrellisSpec, Vec<f64>) {
    let mut r = rng(seed);
    let q = r.random_range(1..=4);
    let t = r.random_range(1..=8);
    let spec = random_trellis(&mut r, q);
    let y = (0..t).map(|_| r.random_range(-3.0..3.0)).collect();
    (spec, y)
}

#[test]
fn matches_path_enumeration() {
    for seed in 0..200 {
        let (spec, y) = random_instance(seed);
        let exact = enumerate_paths(&spec, &y);
        let grid = forward_backward(&spec, &y).unwrap();
        assert!((grid.loglik - exact.loglik).abs() < 1e-9, "seed {seed}");
        assert!((grid.backward_loglik - exact.loglik).abs() < 1e-9, "seed {seed}");
        for t in 0..y.len() {
            for s in 0..spec.num_states {
                assert!((grid.state(t)[s] - exact.state[t][s]).abs() < 1e-9, "seed {seed}");
            }
        }
        let pairs = grid.pair_post.as_ref().unwrap();
        for t in 1..y.len() {
            for (k, &(i, j)) in pairs.edges.iter().enumerate() {
                assert!((pairs.step(t)[k] - exact.pair[t][i][j]).abs() < 1e-9);
            }
        }
        let soft = symbol_posteriors(&grid, &spec).unwrap();
        let fast = SoftSymbolOutput::from_state_posteriors(&grid, &spec).unwrap();
        for t in 0..y.len() {
            for x in 0..2 {
                assert!((soft.symbol(t)[x] - exact.symbol[t][x]).abs() < 1e-9);
                assert!((fast.symbol(t)[x] - soft.symbol(t)[x]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pair_posteriors_marginalize_to_state_posteriors() {
    for seed in 300..340 {
        let (spec, y) = random_instance(seed);
        let grid = forward_backward(&spec, &y).unwrap();
        let pairs = grid.pair_post.as_ref().unwrap();
        for t in 1..y.len() {
            let mut prev = vec![0.0; spec.num_states];
            let mut next = vec![0.0; spec.num_states];
            for (k, &(i, j)) in pairs.edges.iter().enumerate() {
                prev[i] += pairs.step(t)[k];
                next[j] += pairs.step(t)[k];
            }
            for s in 0..spec.num_states {
                assert!((prev[s] - grid.state(t - 1)[s]).abs() < 1e-9);
                assert!((next[s] - grid.state(t)[s]).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #[test]
    fn posteriors_are_normalized(seed in 0u64..10_000) {
        let (spec, y) = random_instance(seed);
        let grid = forward_backward(&spec, &y).unwrap();
        for t in 0..y.len() {
            let row = grid.state(t);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let soft = symbol_posteriors(&grid, &spec).unwrap();
        for t in 0..y.len() {
            prop_assert!((soft.symbol(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rescaling_one_step_leaves_posteriors_unchanged(seed in 0u64..10_000, factor in 1e-200f64..1e200) {
        let (spec, y) = random_instance(seed);
        let base = EmissionLikelihoods::gaussian(&spec, &y).unwrap();
        let q = spec.num_states;
        let k = seed as usize % y.len();
        let mut raw = Vec::with_capacity(y.len() * q);
        for t in 0..y.len() {
            for s in 0..q {
                let v = base.row(t)[s];
                raw.push(if t == k { v * factor } else { v });
            }
        }
        let scaled = EmissionLikelihoods::from_values(q, raw).unwrap();
        let a = forward_backward_with(&spec, &base, FbOptions::default()).unwrap();
        let b = forward_backward_with(&spec, &scaled, FbOptions::default()).unwrap();
        for (x, z) in a.state_post.iter().zip(&b.state_post) {
            prop_assert!((x - z).abs() < 1e-12);
        }
    }
}

#[test]
fn long_sequences_do_not_underflow() {
    let mut r = rng(5);
    let spec = random_trellis(&mut r, 4);
    let y: Vec<f64> = (0..200_000).map(|_| r.random_range(-3.0..3.0)).collect();
    let grid = forward_backward_with(
        &spec,
        &EmissionLikelihoods::gaussian(&spec, &y).unwrap(),
        FbOptions::default(),
    )
    .unwrap();
    assert!(grid.loglik.is_finite() && grid.loglik < -1e4);
    assert!((grid.loglik - grid.backward_loglik).abs() < 1e-9 * grid.loglik.abs());
}
