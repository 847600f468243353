//! Supervised likelihood estimation: a classifier `p(s | y)` and a mixture
//! marginal `p(y)` combined by Bayes' rule into `p(y | s)` for the BCJR
//! recursions.

mod gmm;
mod network;

use serde::{Deserialize, Serialize};

use crate::bcjr::{self, EmissionLikelihoods, SoftSymbolOutput};
use crate::channel::ChannelOutput;
use crate::error::{Error, Result};
use crate::hmm::{learn_transitions, BaumWelchConfig, LearnedChain};
use crate::trellis::TrellisSpec;

pub use gmm::{fit_marginal, fit_marginal_with, Component, GmmConfig, GmmMarginal};
pub use network::{train, Layer, LayerRecord, NnParams, TrainConfig, HIDDEN_1, HIDDEN_2};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Rows evaluated per forward pass during inference.
const INFERENCE_CHUNK: usize = 4096;

/// Received samples with their hidden-state labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub rx: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(rx: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if rx.len() != labels.len() {
            return Err(Error::input(format!("{} samples but {} labels", rx.len(), labels.len())));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::input(format!("label {c} outside [0, {num_classes})")));
        }
        Ok(LabeledDataset { rx, labels, num_classes })
    }

    /// Joint-state labels, or with `isi_only` the ISI coordinate alone
    /// (joint index divided by the number of noise levels).
    pub fn from_channel(out: &ChannelOutput, num_states: usize, levels: usize, isi_only: bool) -> Result<Self> {
        if levels == 0 || num_states % levels != 0 {
            return Err(Error::param("state count must be a multiple of the level count"));
        }
        let (labels, q) = if isi_only {
            (out.state_path.iter().map(|s| s / levels).collect(), num_states / levels)
        } else {
            (out.state_path.clone(), num_states)
        };
        Self::new(out.rx.clone(), labels, q)
    }

    pub fn len(&self) -> usize {
        self.rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx.is_empty()
    }

    /// Classes that never occur.
    pub fn missing_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes];
        self.labels.iter().for_each(|&c| seen[c] = true);
        (0..self.num_classes).filter(|&c| !seen[c]).collect()
    }
}

/// Trains the classifier on `data` with the default optimizer settings.
pub fn train_classifier(data: &LabeledDataset, seed: u64) -> Result<(NnParams, Vec<f64>)> {
    train(&data.rx, &data.labels, data.num_classes, &TrainConfig::default(), seed)
}

/// Classifier, marginal and state prior: everything needed for `p(y | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NnModelFile", into = "NnModelFile")]
pub struct NnModel {
    pub params: NnParams,
    pub gmm: GmmMarginal,
    pub state_prior: Vec<f64>,
}

impl NnModel {
    pub fn new(params: NnParams, gmm: GmmMarginal, state_prior: Vec<f64>) -> Result<Self> {
        if state_prior.len() != params.num_classes() {
            return Err(Error::param(format!(
                "prior has {} entries, classifier has {} classes",
                state_prior.len(),
                params.num_classes()
            )));
        }
        if state_prior.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::param("state prior entries must be strictly positive"));
        }
        gmm.validate()?;
        Ok(NnModel { params, gmm, state_prior })
    }

    /// Trains the classifier on `data` and fits a `components`-term mixture to its samples.
    pub fn train(
        data: &LabeledDataset,
        state_prior: Vec<f64>,
        components: usize,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<(Self, Vec<f64>)> {
        let (params, history) = train(&data.rx, &data.labels, data.num_classes, cfg, seed)?;
        let gmm = fit_marginal(&data.rx, components, seed)?;
        Ok((Self::new(params, gmm, state_prior)?, history))
    }

    pub fn num_states(&self) -> usize {
        self.state_prior.len()
    }

    /// `ln p(y_t | s)` for every sample, as scaled BCJR likelihood rows.
    pub fn likelihoods(&self, rx: &[f64]) -> Result<EmissionLikelihoods> {
        if let Some(t) = rx.iter().position(|y| !y.is_finite()) {
            return Err(Error::input(format!("received sample {t} is not finite")));
        }
        let q = self.num_states();
        let log_prior: Vec<f64> = self.state_prior.iter().map(|p| p.ln()).collect();
        let mut logs = Vec::with_capacity(rx.len() * q);
        for chunk in rx.chunks(INFERENCE_CHUNK) {
            let lp = self.params.log_posteriors(chunk);
            for (row, &y) in lp.rows().into_iter().zip(chunk) {
                let marginal = self.gmm.log_density(y);
                logs.extend(row.iter().zip(&log_prior).map(|(l, p)| l + marginal - p));
            }
        }
        EmissionLikelihoods::from_log_fn(rx.len(), q, |t, out| {
            out.copy_from_slice(&logs[t * q..(t + 1) * q]);
            Ok(())
        })
    }
}

/// `p(s_j | y) p(y) / p(s_j)` for every state.
pub fn nn_likelihood(y: f64, nn: &NnParams, gmm: &GmmMarginal, state_prior: &[f64]) -> Result<Vec<f64>> {
    if state_prior.len() != nn.num_classes() {
        return Err(Error::param("prior length differs from the class count"));
    }
    if state_prior.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::param("state prior entries must be strictly positive"));
    }
    let post = nn.posteriors(&[y]);
    let marginal = gmm.density(y);
    Ok(post.row(0).iter().zip(state_prior).map(|(p, s)| p * marginal / s).collect())
}

/// BCJR with the transitions, labels and initial law of `trellis` and
/// likelihoods from `model`.
pub fn nn_detect(trellis: &TrellisSpec, model: &NnModel, rx: &[f64]) -> Result<SoftSymbolOutput> {
    if trellis.num_states != model.num_states() {
        return Err(Error::param(format!(
            "trellis has {} states, network has {} classes",
            trellis.num_states,
            model.num_states()
        )));
    }
    bcjr::detect_with(trellis, &model.likelihoods(rx)?)
}

/// `reference` with its transitions and initial law re-estimated by
/// Baum-Welch on the unlabeled samples `train_rx`, holding the emission
/// likelihoods fixed to those of `model`. States keep the reference indexing
/// and labels, so no alignment is needed. The detection trellis starts from
/// the stationary law of the learned chain.
pub fn hybrid_trellis(
    reference: &TrellisSpec,
    model: &NnModel,
    train_rx: &[f64],
    em: &BaumWelchConfig,
) -> Result<(TrellisSpec, LearnedChain)> {
    if reference.num_states != model.num_states() {
        return Err(Error::param("network and reference state counts differ"));
    }
    let em = BaumWelchConfig { num_states: reference.num_states, ..em.clone() };
    let chain = learn_transitions(&model.likelihoods(train_rx)?, &em)?;
    let mut out = reference.clone();
    out.transitions = chain.transitions.clone();
    out.initial_dist = out.stationary()?;
    out.validate()?;
    Ok((out, chain))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NnModelFile {
    format_version: u32,
    num_classes: usize,
    layers: Vec<LayerRecord>,
    gmm: GmmMarginal,
    state_prior: Vec<f64>,
}

impl From<NnModel> for NnModelFile {
    fn from(m: NnModel) -> Self {
        NnModelFile {
            format_version: MODEL_FORMAT_VERSION,
            num_classes: m.num_states(),
            layers: m.params.to_records(),
            gmm: m.gmm,
            state_prior: m.state_prior,
        }
    }
}

impl TryFrom<NnModelFile> for NnModel {
    type Error = Error;

    fn try_from(f: NnModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::input(format!("unsupported model format version {}", f.format_version)));
        }
        let params = NnParams::from_records(&f.layers)?;
        if params.num_classes() != f.num_classes {
            return Err(Error::input("declared class count does not match the output layer"));
        }
        NnModel::new(params, f.gmm, f.state_prior)
    }
}
