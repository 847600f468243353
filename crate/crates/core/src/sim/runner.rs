//! Monte Carlo sweep: per-point training, then frames fanned out over a pool.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcjr::{self, EmissionLikelihoods, SoftSymbolOutput};
use crate::channel::{assumed_config, build_joint_trellis, simulate_frame, ChannelConfig, ChannelOutput};
use crate::error::{Error, Result};
use crate::fec::{bits_to_bpsk, ConvCodeSpec, Interleaver};
use crate::hmm::{BaumWelchConfig, HmmDetector};
use crate::nn::{hybrid_trellis, nn_detect, LabeledDataset, NnModel};
use crate::rng::{self, derive_seed, label_id, purpose};
use crate::trellis::TrellisSpec;

use super::config::{ChannelParams, DetectorKind, ExperimentConfig};
use super::results::{ResultRow, SweepResult};

/// A detector ready to run on frames of one sweep point.
#[derive(Debug, Clone)]
pub enum Prepared {
    Model { trellis: TrellisSpec, csi: Option<CsiError> },
    Hmm(Box<HmmDetector>),
    Nn { trellis: TrellisSpec, model: Box<NnModel> },
    Hybrid { trellis: TrellisSpec, model: Box<NnModel> },
}

/// Per-use tap perturbation applied to the receiver's likelihood means.
#[derive(Debug, Clone)]
pub struct CsiError {
    pub variance: f64,
    pub assumed: ChannelConfig,
}

impl Prepared {
    pub fn trellis(&self) -> &TrellisSpec {
        match self {
            Prepared::Model { trellis, .. } | Prepared::Nn { trellis, .. } | Prepared::Hybrid { trellis, .. } => trellis,
            Prepared::Hmm(h) => &h.trellis,
        }
    }

    /// Soft outputs for `rx`; `csi_seed` drives the perturbed likelihoods.
    pub fn detect(&self, rx: &[f64], csi_seed: u64) -> Result<SoftSymbolOutput> {
        match self {
            Prepared::Model { trellis, csi: None } => bcjr::detect(trellis, rx),
            Prepared::Model { trellis, csi: Some(csi) } => {
                bcjr::detect_with(trellis, &perturbed_likelihoods(trellis, csi, rx, csi_seed)?)
            }
            Prepared::Hmm(h) => h.detect(rx),
            Prepared::Nn { trellis, model } | Prepared::Hybrid { trellis, model } => nn_detect(trellis, model, rx),
        }
    }
}

/// Gaussian likelihoods whose means use taps `h_l + e_{l,t}`, one fresh
/// `e_{l,t} ~ N(0, variance)` per tap and step, shared by all states.
fn perturbed_likelihoods(
    trellis: &TrellisSpec,
    csi: &CsiError,
    rx: &[f64],
    seed: u64,
) -> Result<EmissionLikelihoods> {
    let cfg = &csi.assumed;
    let l = cfg.isi.memory;
    let n = cfg.noise.levels;
    let std = csi.variance.sqrt();
    // symbol values of every ISI state, newest first
    let digits: Vec<Vec<f64>> = (0..cfg.isi_states())
        .map(|s| cfg.isi_digits(s).into_iter().map(|d| cfg.constellation[d]).collect())
        .collect();
    let mut r = rng::stream(seed, &[purpose::CSI_ERROR]);
    let mut taps = vec![0.0; l];
    EmissionLikelihoods::from_log_fn(rx.len(), trellis.num_states, |t, out| {
        for (k, h) in taps.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut r);
            *h = cfg.isi.taps[k] + std * e;
        }
        for (isi, xs) in digits.iter().enumerate() {
            let mean: f64 = taps.iter().zip(xs).map(|(h, x)| h * x).sum();
            for level in 0..n {
                let s = isi * n + level;
                let em = crate::trellis::Emission::new(mean, trellis.emissions[s].variance);
                out[s] = em.log_density(rx[t]);
            }
        }
        Ok(())
    })
}

/// Uniform random BPSK symbols with a +1 guard band of `guard` symbols in front.
fn random_symbols(len: usize, guard: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[purpose::INFO_BITS]);
    std::iter::repeat_n(1.0, guard)
        .chain((0..len).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }))
        .collect()
}

fn training_output(params: &ChannelParams, db: f64, len: usize, seed: u64) -> Result<(ChannelConfig, ChannelOutput)> {
    let cfg = params.at_db(db)?;
    let tx = random_symbols(len, cfg.isi.memory - 1, seed);
    let out = simulate_frame(&cfg, &tx, seed)?;
    Ok((cfg, out))
}

/// Trains or builds every detector of one sweep point.
pub fn prepare_point(cfg: &ExperimentConfig, point: usize) -> Vec<(String, Result<Prepared>)> {
    let db = cfg.sweep_db[point];
    let base: Vec<(String, Result<Prepared>)> = cfg
        .detectors
        .par_iter()
        .map(|d| {
            let seed = derive_seed(cfg.seed, &[purpose::TRAINING, point as u64, label_id(&d.name)]);
            (d.name.clone(), prepare_one(cfg, &d.kind, db, seed))
        })
        .collect();
    // hybrids reuse the network of the detector they name
    let lookup = |name: &str| base.iter().find(|(n, _)| n == name).map(|(_, p)| p);
    let finished: Vec<Result<Prepared>> = cfg
        .detectors
        .par_iter()
        .zip(&base)
        .map(|(d, (_, prepared))| match &d.kind {
            DetectorKind::Hybrid { nn, training, em } => match lookup(nn) {
                Some(Ok(Prepared::Nn { trellis, model })) => {
                    let seed = derive_seed(cfg.seed, &[purpose::TRAINING, point as u64, label_id(&d.name)]);
                    let (_, out) = training_output(&cfg.channel.apply(training), db, cfg.training_len(), seed)?;
                    let em = BaumWelchConfig { seed: derive_seed(seed, &[purpose::LEARNING, em.seed]), ..em.clone() };
                    let (t, _) = hybrid_trellis(trellis, model, &out.rx, &em)?;
                    Ok(Prepared::Hybrid { trellis: t, model: model.clone() })
                }
                _ => Err(Error::ContractViolation(format!("hybrid network {nn:?} did not train"))),
            },
            _ => clone_result(prepared),
        })
        .collect();
    base.into_iter().map(|(n, _)| n).zip(finished).collect()
}

fn clone_result(r: &Result<Prepared>) -> Result<Prepared> {
    match r {
        Ok(p) => Ok(p.clone()),
        Err(e) => Err(Error::ContractViolation(e.to_string())),
    }
}

fn prepare_one(cfg: &ExperimentConfig, kind: &DetectorKind, db: f64, seed: u64) -> Result<Prepared> {
    let truth = cfg.channel.at_db(db)?;
    match kind {
        DetectorKind::Model { provision, csi_error_variance } => {
            let (mem, lev) = provision.resolve(&cfg.channel);
            let assumed = assumed_config(&truth, mem, lev)?;
            let trellis = build_joint_trellis(&assumed)?;
            let csi = (*csi_error_variance > 0.0).then(|| CsiError { variance: *csi_error_variance, assumed });
            Ok(Prepared::Model { trellis, csi })
        }
        DetectorKind::Hmm { provision, training, em } => {
            let (mem, lev) = provision.resolve(&cfg.channel);
            let reference = build_joint_trellis(&assumed_config(&truth, mem, lev)?)?;
            let (_, out) = training_output(&cfg.channel.apply(training), db, cfg.training_len(), seed)?;
            let em = BaumWelchConfig { seed: derive_seed(seed, &[purpose::LEARNING, em.seed]), ..em.clone() };
            Ok(Prepared::Hmm(Box::new(HmmDetector::train(&out.rx, &em, &reference)?)))
        }
        DetectorKind::Nn { provision, training, optimizer, components } => {
            let (mem, lev) = provision.resolve(&cfg.channel);
            let trellis = build_joint_trellis(&assumed_config(&truth, mem, lev)?)?;
            let train_params = cfg.channel.apply(training);
            if train_params.memory != mem {
                return Err(Error::param(format!(
                    "nn labels need training memory {} to equal the provisioned memory {mem}",
                    train_params.memory
                )));
            }
            let isi_only = match (lev, train_params.levels) {
                (a, b) if a == b => false,
                (1, _) => true,
                (a, b) => {
                    return Err(Error::param(format!(
                        "cannot label {b} training levels for a detector with {a} levels"
                    )))
                }
            };
            let (train_cfg, out) = training_output(&train_params, db, cfg.training_len(), seed)?;
            let data = LabeledDataset::from_channel(&out, train_cfg.num_states(), train_params.levels, isi_only)?;
            let k = components.unwrap_or(trellis.num_states);
            let (model, _) = NnModel::train(&data, trellis.initial_dist.clone(), k, optimizer, seed)?;
            Ok(Prepared::Nn { trellis, model: Box::new(model) })
        }
        DetectorKind::Hybrid { .. } => Err(Error::ContractViolation("hybrid detectors are assembled after training".into())),
    }
}

/// Error counts of one frame for one detector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub symbols: u64,
    pub symbol_errors: u64,
    pub bits: u64,
    pub bit_errors: u64,
}

/// Transmitted frame shared by all detectors of one trial.
pub struct TrialFrame {
    pub info_bits: Vec<u8>,
    pub tx_symbols: Vec<f64>,
    pub rx: Vec<f64>,
}

pub fn build_frame(cfg: &ExperimentConfig, channel: &ChannelConfig, interleaver: &Interleaver, trial: usize) -> Result<TrialFrame> {
    let bits_seed = derive_seed(cfg.seed, &[purpose::INFO_BITS, trial as u64]);
    let mut r = rng::stream(bits_seed, &[]);
    let info_bits: Vec<u8> = (0..cfg.info_bits()).map(|_| r.random_range(0..2u8)).collect();
    let coded = if cfg.coded { ConvCodeSpec::default().encode(&info_bits) } else { info_bits.clone() };
    let tx_symbols = bits_to_bpsk(&interleaver.interleave(&coded)?);
    let guard = channel.isi.memory - 1;
    let tx: Vec<f64> = std::iter::repeat_n(1.0, guard).chain(tx_symbols.iter().cloned()).collect();
    let out = simulate_frame(channel, &tx, derive_seed(cfg.seed, &[purpose::CHANNEL, trial as u64]))?;
    Ok(TrialFrame { info_bits, tx_symbols, rx: out.rx })
}

pub fn count_errors(cfg: &ExperimentConfig, frame: &TrialFrame, soft: &SoftSymbolOutput, interleaver: &Interleaver) -> Result<FrameCounts> {
    let decided = bcjr::map_detect(soft);
    let symbol_errors = decided.iter().zip(&frame.tx_symbols).filter(|(a, b)| a != b).count() as u64;
    let llrs = soft
        .llrs
        .as_ref()
        .ok_or_else(|| Error::ContractViolation("binary alphabet expected for bit decisions".into()))?;
    let info = if cfg.coded {
        ConvCodeSpec::default().soft_decode(&interleaver.deinterleave(llrs)?)?
    } else {
        // LLR = ln p(+1)/p(-1); bit 0 maps to +1, ties go to -1 as in the MAP rule
        interleaver.deinterleave(&decided)?.iter().map(|&x| u8::from(x < 0.0)).collect()
    };
    let bit_errors = info.iter().zip(&frame.info_bits).filter(|(a, b)| a != b).count() as u64;
    Ok(FrameCounts {
        symbols: frame.tx_symbols.len() as u64,
        symbol_errors,
        bits: frame.info_bits.len() as u64,
        bit_errors,
    })
}

/// Wall-clock split of a sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub training_secs: Vec<f64>,
    pub detection_secs: f64,
}

/// Runs every sweep point on a pool of `jobs` workers. Results depend only on
/// the configuration, never on `jobs`.
pub fn run_sweep_with(cfg: &ExperimentConfig, jobs: usize) -> Result<(SweepResult, Vec<Vec<(String, Result<Prepared>)>>, Timings)> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(cfg))
}

pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepResult> {
    Ok(run_sweep_with(cfg, jobs)?.0)
}

type Outcome = Result<FrameCounts, (usize, String)>;

fn run_in_pool(cfg: &ExperimentConfig) -> Result<(SweepResult, Vec<Vec<(String, Result<Prepared>)>>, Timings)> {
    let mut timings = Timings::default();
    let mut prepared = Vec::with_capacity(cfg.sweep_db.len());
    for p in 0..cfg.sweep_db.len() {
        let t0 = Instant::now();
        prepared.push(prepare_point(cfg, p));
        timings.training_secs.push(t0.elapsed().as_secs_f64());
    }
    let interleaver = if cfg.interleave {
        Interleaver::random(cfg.frame_len, cfg.interleaver_seed)
    } else {
        Interleaver::identity(cfg.frame_len)
    };
    let channels: Vec<Result<ChannelConfig>> = cfg.sweep_db.iter().map(|&db| cfg.channel.at_db(db)).collect();

    let t0 = Instant::now();
    let tasks: Vec<(usize, usize)> = (0..cfg.sweep_db.len())
        .flat_map(|p| (0..cfg.trials).map(move |k| (p, k)))
        .collect();
    let outcomes: Vec<Vec<Outcome>> = tasks
        .par_iter()
        .map(|&(p, k)| {
            let dets = &prepared[p];
            let frame = match &channels[p] {
                Ok(ch) => build_frame(cfg, ch, &interleaver, k),
                Err(e) => Err(Error::ContractViolation(e.to_string())),
            };
            let frame = match frame {
                Ok(f) => f,
                Err(e) => return vec![Err((k, e.to_string())); dets.len()],
            };
            dets.iter()
                .map(|(name, det)| {
                    let det = det.as_ref().map_err(|e| (0, e.to_string()))?;
                    let csi_seed = derive_seed(cfg.seed, &[purpose::CSI_ERROR, p as u64, k as u64, label_id(name)]);
                    det.detect(&frame.rx, csi_seed)
                        .and_then(|soft| count_errors(cfg, &frame, &soft, &interleaver))
                        .map_err(|e| (k, e.to_string()))
                })
                .collect()
        })
        .collect();
    timings.detection_secs = t0.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    for (p, &db) in cfg.sweep_db.iter().enumerate() {
        for (d, spec) in cfg.detectors.iter().enumerate() {
            let mut row = ResultRow::new(&spec.name, db, cfg.trials as u64);
            if let Err(e) = &prepared[p][d].1 {
                row.error = Some(format!("training failed: {e}"));
                rows.push(row);
                continue;
            }
            for out in &outcomes[p * cfg.trials..(p + 1) * cfg.trials] {
                match &out[d] {
                    Ok(c) => row.add(c),
                    Err((k, msg)) => {
                        // keep the first failing trial in trial order
                        if row.error.is_none() {
                            row.error = Some(format!("trial {k}: {msg}"));
                        }
                    }
                }
            }
            rows.push(row);
        }
    }
    Ok((SweepResult { rows }, prepared, timings))
}
