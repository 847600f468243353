//! ISI channel with bursty Markov-Middleton impulsive noise.
//!
//! The received sample at time `t` is
//! `y_t = sum_l (h_l + e_{l,t}) x_{t-l+1} + z_t`, where the taps follow a
//! unit-power exponentially decaying profile, `e_{l,t}` is an optional
//! per-use Gaussian tap distortion and `z_t` is zero-mean Gaussian with a
//! variance selected by a hidden Markov chain over `N` noise levels.
//!
//! Joint detector states combine the ISI state `(x_t, ..., x_{t-L+1})` with
//! the noise level. States are indexed as `isi * N + level`, where the ISI
//! index stores the newest symbol in its most significant base-`|X|` digit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trellis::{Emission, TrellisSpec};

/// Exponentially decaying, unit-power ISI tap profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsiProfile {
    pub memory: usize,
    pub decay_rate: f64,
    pub taps: Vec<f64>,
    /// Variance of the per-use Gaussian distortion added to every tap.
    pub tap_deviation: f64,
}

/// Builds `h_l = exp(-eta (l-1)) / sqrt(sum_k exp(-2 eta (k-1)))`.
pub fn build_isi_profile(memory: usize, decay_rate: f64, tap_deviation: f64) -> Result<IsiProfile> {
    if memory == 0 {
        return Err(Error::param("ISI memory must be at least one symbol"));
    }
    if !decay_rate.is_finite() {
        return Err(Error::param(format!("decay rate {decay_rate} is not finite")));
    }
    if !(tap_deviation >= 0.0) || !tap_deviation.is_finite() {
        return Err(Error::param(format!("tap deviation {tap_deviation} must be a nonnegative real")));
    }
    let raw: Vec<f64> = (0..memory).map(|l| (-decay_rate * l as f64).exp()).collect();
    let norm = raw.iter().map(|h| h * h).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::param(format!("decay rate {decay_rate} gives unnormalizable taps")));
    }
    Ok(IsiProfile {
        memory,
        decay_rate,
        taps: raw.into_iter().map(|h| h / norm).collect(),
        tap_deviation,
    })
}

/// Parameters of the Markov-Middleton class-A noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovMiddletonParams {
    pub levels: usize,
    pub impulsive_index: f64,
    pub background_ratio: f64,
    pub total_power: f64,
    pub correlation: f64,
}

impl MarkovMiddletonParams {
    /// Single-level background noise of the given power.
    pub fn awgn(total_power: f64) -> Self {
        MarkovMiddletonParams {
            levels: 1,
            impulsive_index: 1.0,
            background_ratio: 1.0,
            total_power,
            correlation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::param("noise model needs at least one level"));
        }
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.impulsive_index, "impulsive index A")?;
        positive(self.background_ratio, "background ratio Gamma")?;
        positive(self.total_power, "total noise power")?;
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::param(format!(
                "noise correlation r = {} outside [0, 1]",
                self.correlation
            )));
        }
        Ok(())
    }
}

/// Level occupancies `p_j` and variances `sigma_j^2` of the noise model.
///
/// With a single level the variance is the total power itself: the model is
/// then pure background AWGN.
pub fn middleton_levels(params: &MarkovMiddletonParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let n = params.levels;
    if n == 1 {
        return Ok((vec![1.0], vec![params.total_power]));
    }
    let a = params.impulsive_index;
    // log(A^j / j!); the common exp(-A) cancels in the normalization
    let mut log_terms = Vec::with_capacity(n);
    let mut acc = 0.0;
    for j in 0..n {
        if j > 0 {
            acc += a.ln() - (j as f64).ln();
        }
        log_terms.push(acc);
    }
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let probs = weights.iter().map(|w| w / total).collect();
    let g = params.background_ratio;
    let vars = (0..n)
        .map(|j| params.total_power * (j as f64 / a + g) / (1.0 + g))
        .collect();
    Ok((probs, vars))
}

/// `P[i][j] = r + (1-r) p_j` on the diagonal and `(1-r) p_j` elsewhere.
pub fn noise_transition_matrix(params: &MarkovMiddletonParams) -> Result<Vec<Vec<f64>>> {
    let (p, _) = middleton_levels(params)?;
    let r = params.correlation;
    Ok((0..p.len())
        .map(|i| {
            (0..p.len())
                .map(|j| {
                    let base = (1.0 - r) * p[j];
                    if i == j {
                        r + base
                    } else {
                        base
                    }
                })
                .collect()
        })
        .collect())
}

/// Complete channel description: ISI profile, noise model and constellation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub isi: IsiProfile,
    pub noise: MarkovMiddletonParams,
    pub constellation: Vec<f64>,
}

impl ChannelConfig {
    pub fn new(isi: IsiProfile, noise: MarkovMiddletonParams, constellation: Vec<f64>) -> Result<Self> {
        let cfg = ChannelConfig { isi, noise, constellation };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bpsk(isi: IsiProfile, noise: MarkovMiddletonParams) -> Result<Self> {
        Self::new(isi, noise, bpsk())
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        let m = self.constellation.len();
        if m < 2 {
            return Err(Error::param("constellation needs at least two symbols"));
        }
        let mean = self.constellation.iter().sum::<f64>() / m as f64;
        let power = self.constellation.iter().map(|x| x * x).sum::<f64>() / m as f64;
        if mean.abs() > 1e-12 || (power - 1.0).abs() > 1e-12 {
            return Err(Error::param("constellation must have zero mean and unit average power"));
        }
        if self.isi.taps.len() != self.isi.memory {
            return Err(Error::param("tap vector length differs from ISI memory"));
        }
        Ok(())
    }

    pub fn alphabet_size(&self) -> usize {
        self.constellation.len()
    }

    pub fn isi_states(&self) -> usize {
        self.alphabet_size().pow(self.isi.memory as u32)
    }

    pub fn num_states(&self) -> usize {
        self.isi_states() * self.noise.levels
    }

    /// Splits a joint state index into `(isi_state, noise_level)`.
    pub fn split_state(&self, state: usize) -> (usize, usize) {
        (state / self.noise.levels, state % self.noise.levels)
    }

    pub fn symbol_index(&self, x: f64) -> Option<usize> {
        self.constellation.iter().position(|&c| c == x)
    }

    /// Symbol indices of an ISI state, newest (`x_t`) first.
    pub fn isi_digits(&self, isi_state: usize) -> Vec<usize> {
        let m = self.alphabet_size();
        let mut digits = vec![0; self.isi.memory];
        let mut rest = isi_state;
        for d in digits.iter_mut().rev() {
            *d = rest % m;
            rest /= m;
        }
        digits
    }

    /// ISI state index of a symbol window given newest symbol first.
    pub fn isi_state_of(&self, newest_first: &[usize]) -> usize {
        let m = self.alphabet_size();
        newest_first.iter().fold(0, |acc, &d| acc * m + d)
    }

    /// Noiseless channel output for an ISI state.
    pub fn isi_mean(&self, isi_state: usize) -> f64 {
        self.isi_digits(isi_state)
            .iter()
            .zip(&self.isi.taps)
            .map(|(&d, h)| h * self.constellation[d])
            .sum()
    }

    /// Same channel with the total noise power replaced.
    pub fn with_noise_power(&self, total_power: f64) -> ChannelConfig {
        let mut c = self.clone();
        c.noise.total_power = total_power;
        c
    }
}

pub fn bpsk() -> Vec<f64> {
    vec![-1.0, 1.0]
}

/// Noise power `sigma^2 = 10^(-dB/10)` for a unit-power signal.
pub fn noise_power_from_db(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Joint ISI x noise-level trellis of the channel.
pub fn build_joint_trellis(config: &ChannelConfig) -> Result<TrellisSpec> {
    config.validate()?;
    let m = config.alphabet_size();
    let n = config.noise.levels;
    let isi_q = config.isi_states();
    let q = isi_q * n;
    let (p_levels, vars) = middleton_levels(&config.noise)?;
    let noise_tr = noise_transition_matrix(&config.noise)?;
    let shift = isi_q / m;

    let mut transitions = vec![vec![0.0; q]; q];
    for isi in 0..isi_q {
        for sym in 0..m {
            // drop the oldest digit, push the new symbol in front
            let next_isi = sym * shift + isi / m;
            for a in 0..n {
                for b in 0..n {
                    transitions[isi * n + a][next_isi * n + b] = noise_tr[a][b] / m as f64;
                }
            }
        }
    }
    let mut emissions = Vec::with_capacity(q);
    let mut labels = Vec::with_capacity(q);
    let mut initial = Vec::with_capacity(q);
    for isi in 0..isi_q {
        let mean = config.isi_mean(isi);
        let newest = config.isi_digits(isi)[0];
        for level in 0..n {
            emissions.push(Emission::new(mean, vars[level]));
            labels.push(newest);
            initial.push(p_levels[level] / isi_q as f64);
        }
    }
    TrellisSpec::new(
        transitions,
        emissions,
        config.constellation.clone(),
        Some(labels),
        initial,
    )
}

/// Trellis built under assumed ISI memory and noise-level count.
///
/// Taps are re-derived from the decay rate for `assumed_memory`; with a single
/// assumed level the emission variance is the total noise power.
pub fn build_reduced_trellis(
    config: &ChannelConfig,
    assumed_memory: usize,
    assumed_levels: usize,
) -> Result<TrellisSpec> {
    build_joint_trellis(&assumed_config(config, assumed_memory, assumed_levels)?)
}

/// The channel as a receiver provisioned for `assumed_memory` / `assumed_levels` sees it.
pub fn assumed_config(
    config: &ChannelConfig,
    assumed_memory: usize,
    assumed_levels: usize,
) -> Result<ChannelConfig> {
    if assumed_memory == 0 || assumed_levels == 0 {
        return Err(Error::param("assumed memory and level count must be at least one"));
    }
    let isi = if assumed_memory == config.isi.memory {
        config.isi.clone()
    } else {
        build_isi_profile(assumed_memory, config.isi.decay_rate, config.isi.tap_deviation)?
    };
    let mut noise = config.noise;
    noise.levels = assumed_levels;
    ChannelConfig::new(isi, noise, config.constellation.clone())
}

/// One transmission through the coded pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub info_bits: Vec<u8>,
    pub coded_bits: Vec<u8>,
    /// Data symbols, without the guard band.
    pub tx_symbols: Vec<f64>,
    pub rx: Vec<f64>,
    /// Hidden joint-state index per data symbol.
    pub state_path: Vec<usize>,
}

/// Received samples and hidden joint states of one simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    pub rx: Vec<f64>,
    pub state_path: Vec<usize>,
}

/// Passes `tx` through the channel.
///
/// The first `L-1` entries of `tx` are the guard band; one output sample and
/// one joint state are produced for every following symbol. The noise-level
/// chain starts from its stationary law. The result is a pure function of
/// `(config, tx, seed)`.
pub fn simulate_frame(config: &ChannelConfig, tx: &[f64], seed: u64) -> Result<ChannelOutput> {
    config.validate()?;
    let l = config.isi.memory;
    if tx.len() < l {
        return Err(Error::input(format!(
            "need at least {l} symbols (guard band of {} plus data)",
            l - 1
        )));
    }
    let idx: Vec<usize> = tx
        .iter()
        .enumerate()
        .map(|(t, &x)| {
            config
                .symbol_index(x)
                .ok_or_else(|| Error::input(format!("symbol {x} at position {t} is not in the constellation")))
        })
        .collect::<Result<_>>()?;
    let (p_levels, vars) = middleton_levels(&config.noise)?;
    let stds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
    let tap_std = config.isi.tap_deviation.sqrt();
    let r = config.noise.correlation;
    let n = config.noise.levels;

    let mut rng = rng::stream(seed, &[rng::purpose::CHANNEL]);
    let draw_level = |rng: &mut rng::StreamRng| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, p) in p_levels.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        n - 1
    };

    let t_len = tx.len() + 1 - l;
    let mut rx = Vec::with_capacity(t_len);
    let mut path = Vec::with_capacity(t_len);
    let mut level = draw_level(&mut rng);
    let mut window = vec![0usize; l];
    for t in (l - 1)..tx.len() {
        if t >= l {
            let stay: f64 = rng.random();
            if stay >= r {
                level = draw_level(&mut rng);
            }
        }
        let mut y = 0.0;
        for (k, h) in config.isi.taps.iter().enumerate() {
            let x = tx[t - k];
            window[k] = idx[t - k];
            let eps = if tap_std > 0.0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                tap_std * e
            } else {
                0.0
            };
            y += (h + eps) * x;
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        rx.push(y + stds[level] * z);
        path.push(config.isi_state_of(&window) * n + level);
    }
    Ok(ChannelOutput { rx, state_path: path })
}
