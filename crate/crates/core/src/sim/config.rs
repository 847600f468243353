//! JSON experiment description.

use serde::{Deserialize, Serialize};

use crate::channel::{build_isi_profile, noise_power_from_db, ChannelConfig, MarkovMiddletonParams};
use crate::error::{Error, Result};
use crate::fec::TAIL_BITS;
use crate::hmm::BaumWelchConfig;
use crate::nn::TrainConfig;

/// Channel parameters without the noise power, which each sweep point sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub memory: usize,
    #[serde(default = "one")]
    pub decay_rate: f64,
    #[serde(default)]
    pub tap_deviation: f64,
    #[serde(default = "one_level")]
    pub levels: usize,
    #[serde(default = "default_impulsive_index")]
    pub impulsive_index: f64,
    #[serde(default = "default_background_ratio")]
    pub background_ratio: f64,
    #[serde(default)]
    pub correlation: f64,
}

fn one() -> f64 {
    1.0
}

fn one_level() -> usize {
    1
}

fn default_impulsive_index() -> f64 {
    0.8
}

fn default_background_ratio() -> f64 {
    0.01
}

impl ChannelParams {
    /// Channel at `db`, with noise power `10^(-db/10)`.
    pub fn at_db(&self, db: f64) -> Result<ChannelConfig> {
        let isi = build_isi_profile(self.memory, self.decay_rate, self.tap_deviation)?;
        let noise = MarkovMiddletonParams {
            levels: self.levels,
            impulsive_index: self.impulsive_index,
            background_ratio: self.background_ratio,
            total_power: noise_power_from_db(db),
            correlation: self.correlation,
        };
        ChannelConfig::bpsk(isi, noise)
    }

    pub fn apply(&self, o: &ChannelOverride) -> ChannelParams {
        ChannelParams {
            memory: o.memory.unwrap_or(self.memory),
            decay_rate: o.decay_rate.unwrap_or(self.decay_rate),
            tap_deviation: o.tap_deviation.unwrap_or(self.tap_deviation),
            levels: o.levels.unwrap_or(self.levels),
            impulsive_index: o.impulsive_index.unwrap_or(self.impulsive_index),
            background_ratio: o.background_ratio.unwrap_or(self.background_ratio),
            correlation: o.correlation.unwrap_or(self.correlation),
        }
    }
}

/// Fields replaced in the channel that produces a detector's training data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelOverride {
    pub memory: Option<usize>,
    pub decay_rate: Option<f64>,
    pub tap_deviation: Option<f64>,
    pub levels: Option<usize>,
    pub impulsive_index: Option<f64>,
    pub background_ratio: Option<f64>,
    pub correlation: Option<f64>,
}

/// Trellis dimensions a detector is provisioned for; unset fields follow the channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provision {
    pub memory: Option<usize>,
    pub levels: Option<usize>,
}

impl Provision {
    pub fn resolve(&self, channel: &ChannelParams) -> (usize, usize) {
        (self.memory.unwrap_or(channel.memory), self.levels.unwrap_or(channel.levels))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorKind {
    /// BCJR on the channel model. With `csi_error_variance > 0` every tap used
    /// for the likelihood means is perturbed by fresh Gaussian noise of that
    /// variance at every time step.
    Model {
        #[serde(default)]
        provision: Provision,
        #[serde(default)]
        csi_error_variance: f64,
    },
    /// Baum-Welch learned trellis, labeled against the provisioned model.
    Hmm {
        #[serde(default)]
        provision: Provision,
        #[serde(default)]
        training: ChannelOverride,
        #[serde(default)]
        em: BaumWelchConfig,
    },
    /// Network likelihoods with model-based transitions. Labels are joint
    /// states when the provisioned level count equals the training channel's,
    /// ISI states when it is one.
    Nn {
        #[serde(default)]
        provision: Provision,
        #[serde(default)]
        training: ChannelOverride,
        #[serde(default)]
        optimizer: TrainConfig,
        /// Mixture components of the marginal; defaults to the state count.
        #[serde(default)]
        components: Option<usize>,
    },
    /// Likelihoods of the `nn` detector; transitions re-learned by
    /// Baum-Welch on unlabeled training samples with those likelihoods fixed.
    Hybrid {
        nn: String,
        #[serde(default)]
        training: ChannelOverride,
        #[serde(default)]
        em: BaumWelchConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: DetectorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelParams,
    /// SNR / SINR points in dB.
    pub sweep_db: Vec<f64>,
    /// Data symbols per frame (coded bits when `coded`).
    pub frame_len: usize,
    pub trials: usize,
    #[serde(default = "yes")]
    pub coded: bool,
    #[serde(default = "yes")]
    pub interleave: bool,
    pub seed: u64,
    #[serde(default)]
    pub interleaver_seed: u64,
    /// Training symbols per detector and sweep point; defaults to `frame_len`.
    #[serde(default)]
    pub training_len: Option<usize>,
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub output: Option<String>,
    /// Write every trained model next to the results.
    #[serde(default)]
    pub save_models: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|source| Error::Json { context: "experiment config".into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn training_len(&self) -> usize {
        self.training_len.unwrap_or(self.frame_len)
    }

    /// Information bits per frame.
    pub fn info_bits(&self) -> usize {
        if self.coded {
            self.frame_len / 2 - TAIL_BITS
        } else {
            self.frame_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.at_db(0.0)?;
        if self.sweep_db.is_empty() {
            return Err(Error::param("sweep has no points"));
        }
        if let Some(db) = self.sweep_db.iter().find(|d| !d.is_finite()) {
            return Err(Error::param(format!("sweep point {db} is not finite")));
        }
        if self.frame_len < 10 * self.channel.memory {
            return Err(Error::param(format!(
                "frame length {} is shorter than ten channel memories",
                self.frame_len
            )));
        }
        if self.coded && (self.frame_len % 2 != 0 || self.frame_len <= 2 * TAIL_BITS) {
            return Err(Error::param(format!(
                "coded frames need an even length above {}, got {}",
                2 * TAIL_BITS,
                self.frame_len
            )));
        }
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if self.training_len() == 0 {
            return Err(Error::param("training length must be positive"));
        }
        if self.detectors.is_empty() {
            return Err(Error::param("no detectors configured"));
        }
        for (k, d) in self.detectors.iter().enumerate() {
            if d.name.is_empty() || d.name.contains([',', '"', '\n']) {
                return Err(Error::param(format!("detector name {:?} is empty or not CSV-safe", d.name)));
            }
            if self.detectors[..k].iter().any(|o| o.name == d.name) {
                return Err(Error::param(format!("detector name {:?} is used twice", d.name)));
            }
            match &d.kind {
                DetectorKind::Model { csi_error_variance, provision } => {
                    if !(*csi_error_variance >= 0.0) || !csi_error_variance.is_finite() {
                        return Err(Error::param("csi_error_variance must be a nonnegative real"));
                    }
                    check_provision(provision)?;
                }
                DetectorKind::Hmm { provision, training, em } => {
                    check_provision(provision)?;
                    self.channel.apply(training).at_db(0.0)?;
                    BaumWelchConfig { num_states: 1, ..em.clone() }.validate()?;
                }
                DetectorKind::Nn { provision, training, optimizer, components } => {
                    check_provision(provision)?;
                    self.channel.apply(training).at_db(0.0)?;
                    optimizer.validate()?;
                    if *components == Some(0) {
                        return Err(Error::param("mixture needs at least one component"));
                    }
                }
                DetectorKind::Hybrid { nn, training, em } => {
                    let found = self.detectors.iter().find(|o| o.name == *nn).map(|o| &o.kind);
                    if !matches!(found, Some(DetectorKind::Nn { .. })) {
                        return Err(Error::param(format!("hybrid {:?}: {nn:?} is not an nn detector", d.name)));
                    }
                    self.channel.apply(training).at_db(0.0)?;
                    BaumWelchConfig { num_states: 1, ..em.clone() }.validate()?;
                }
            }
        }
        Ok(())
    }
}

fn check_provision(p: &Provision) -> Result<()> {
    if p.memory == Some(0) || p.levels == Some(0) {
        return Err(Error::param("provisioned memory and levels must be at least one"));
    }
    Ok(())
}
