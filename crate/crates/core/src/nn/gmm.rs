//! One-dimensional Gaussian mixture for the marginal density of the received samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmMarginal {
    pub components: Vec<Component>,
}

impl GmmMarginal {
    pub fn log_density(&self, y: f64) -> f64 {
        let logs = self.components.iter().map(|c| {
            let d = y - c.mean;
            c.weight.ln() - 0.5 * (2.0 * std::f64::consts::PI * c.variance).ln() - d * d / (2.0 * c.variance)
        });
        let logs: Vec<f64> = logs.collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::input("mixture has no components"));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let ok = self.components.iter().all(|c| c.weight > 0.0 && c.mean.is_finite() && c.variance > 0.0 && c.variance.is_finite());
        if !ok || (total - 1.0).abs() > 1e-10 {
            return Err(Error::input("mixture weights must be positive and sum to one, variances positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub max_iters: usize,
    /// Relative log-likelihood improvement at which EM stops.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig { max_iters: 500, tol: 1e-8, variance_floor: 1e-6 }
    }
}

/// EM fit of a `k`-component mixture to `rx`.
///
/// Means start at jittered quantiles of the data (the jitter is drawn from
/// `seed`), variances at the sample variance, weights uniform. Returns the
/// mixture and the log-likelihood before every update.
pub fn fit_marginal_with(rx: &[f64], k: usize, seed: u64, cfg: &GmmConfig) -> Result<(GmmMarginal, Vec<f64>)> {
    if k == 0 {
        return Err(Error::param("mixture needs at least one component"));
    }
    if rx.is_empty() {
        return Err(Error::input("cannot fit a mixture to no data"));
    }
    if let Some(t) = rx.iter().position(|y| !y.is_finite()) {
        return Err(Error::input(format!("sample {t} is not finite")));
    }
    let n = rx.len() as f64;
    let mean = rx.iter().sum::<f64>() / n;
    let var = (rx.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).max(cfg.variance_floor);
    let mut sorted = rx.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut r = rng::stream(seed, &[rng::purpose::LEARNING, 0x6d6d]);
    let mut comps: Vec<Component> = (0..k)
        .map(|j| {
            let u: f64 = r.random_range(0.25..0.75);
            let pos = ((j as f64 + u) / k as f64 * n) as usize;
            Component { weight: 1.0 / k as f64, mean: sorted[pos.min(rx.len() - 1)], variance: var }
        })
        .collect();

    let mut history = Vec::new();
    let mut resp = vec![0.0; k];
    for _ in 0..cfg.max_iters {
        let mut s0 = vec![0.0; k];
        let mut s1 = vec![0.0; k];
        let mut ll = 0.0;
        let consts: Vec<(f64, f64)> = comps
            .iter()
            .map(|c| (c.weight.ln() - 0.5 * (2.0 * std::f64::consts::PI * c.variance).ln(), 0.5 / c.variance))
            .collect();
        let fill = |y: f64, resp: &mut [f64]| -> f64 {
            let mut max = f64::NEG_INFINITY;
            for (j, c) in comps.iter().enumerate() {
                let d = y - c.mean;
                resp[j] = consts[j].0 - d * d * consts[j].1;
                max = max.max(resp[j]);
            }
            let mut sum = 0.0;
            for v in resp.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            resp.iter_mut().for_each(|v| *v /= sum);
            max + sum.ln()
        };
        for &y in rx {
            ll += fill(y, &mut resp);
            for j in 0..k {
                s0[j] += resp[j];
                s1[j] += resp[j] * y;
            }
        }
        let means: Vec<f64> = (0..k).map(|j| if s0[j] > 0.0 { s1[j] / s0[j] } else { comps[j].mean }).collect();
        let mut s2 = vec![0.0; k];
        for &y in rx {
            fill(y, &mut resp);
            for j in 0..k {
                s2[j] += resp[j] * (y - means[j]).powi(2);
            }
        }
        let stalled = history.last().is_some_and(|&prev: &f64| (ll - prev).abs() <= cfg.tol * prev.abs());
        history.push(ll);
        if stalled {
            break;
        }
        for j in 0..k {
            // keep a component alive with a tiny weight instead of dropping it
            if s0[j] > 1e-12 {
                comps[j] = Component {
                    weight: s0[j] / n,
                    mean: means[j],
                    variance: (s2[j] / s0[j]).max(cfg.variance_floor),
                };
            } else {
                comps[j].weight = 1e-12;
            }
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= total);
    }
    Ok((GmmMarginal { components: comps }, history))
}

pub fn fit_marginal(rx: &[f64], k: usize, seed: u64) -> Result<GmmMarginal> {
    Ok(fit_marginal_with(rx, k, seed, &GmmConfig::default())?.0)
}
