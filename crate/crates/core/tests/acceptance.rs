//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full-scale sweeps, so expect tens of minutes on one core. The
//! process exits nonzero on a failed criterion only when
//! `ACCEPTANCE_STRICT=1` is set; otherwise failures are reported and the
//! summary line carries the count.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{enumerate_paths, q_function, random_trellis, rng, sample_hmm};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use trellis_detect::bcjr::{forward_backward, symbol_posteriors};
use trellis_detect::channel::{
    build_isi_profile, build_joint_trellis, noise_power_from_db, simulate_frame, ChannelConfig,
    MarkovMiddletonParams,
};
use trellis_detect::fec::{bits_to_bpsk, ConvCodeSpec};
use trellis_detect::hmm::{align_states, baum_welch, BaumWelchConfig};
use trellis_detect::nn::{fit_marginal, nn_likelihood, train, NnParams, TrainConfig};
use trellis_detect::sim::{run_sweep, ExperimentConfig, ResultRow, SweepResult};
use trellis_detect::trellis::stationary_distribution;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let path = configs_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::from_json(&text).unwrap()
}

fn row<'a>(sweep: &'a SweepResult, detector: &str, db: f64) -> &'a ResultRow {
    let r = sweep.row(detector, db).unwrap_or_else(|| panic!("no row for {detector} at {db} dB"));
    if let Some(e) = &r.error {
        panic!("{detector} at {db} dB failed: {e}");
    }
    r
}

fn ber_text(r: &ResultRow) -> String {
    format!("{:.3e} ({}/{})", r.ber(), r.bit_errors, r.bits)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = load("uncoded_awgn.json");
    let sweep = run_sweep(&cfg, 1).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for &db in &cfg.sweep_db {
        let r = row(&sweep, "full-csi", db);
        let snr = 10f64.powf(db / 10.0);
        let p = q_function((2.0 * snr).sqrt());
        let se = (p * (1.0 - p) / r.symbols as f64).sqrt();
        let z = (r.ser() - p) / se;
        pass &= z.abs() <= 3.0;
        // real-valued noise of variance 1/snr gives Q(sqrt(snr)); shown for reference
        let p1 = q_function(snr.sqrt());
        let z1 = (r.ser() - p1) / (p1 * (1.0 - p1) / r.symbols as f64).sqrt();
        parts.push(format!("{db} dB ser {:.4e} vs {:.4e} ({z:+.2} se; Q(sqrt snr) {z1:+.2} se)", r.ser(), p));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    Outcome::new(pass, format!("{}; {secs:.0} s (target < 120 s)", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let q = r.random_range(1..=4);
        let t = r.random_range(1..=8);
        let spec = random_trellis(&mut r, q);
        let y: Vec<f64> = (0..t).map(|_| r.random_range(-3.0..3.0)).collect();
        let exact = enumerate_paths(&spec, &y);
        let grid = forward_backward(&spec, &y).unwrap();
        worst = worst.max((grid.loglik - exact.loglik).abs());
        for (s_t, e_t) in (0..t).map(|k| (grid.state(k), &exact.state[k])) {
            for (a, b) in s_t.iter().zip(e_t) {
                worst = worst.max((a - b).abs());
            }
        }
        let pairs = grid.pair_post.as_ref().unwrap();
        for k in 1..t {
            for (e, &(i, j)) in pairs.edges.iter().enumerate() {
                worst = worst.max((pairs.step(k)[e] - exact.pair[k][i][j]).abs());
            }
        }
        let soft = symbol_posteriors(&grid, &spec).unwrap();
        for k in 0..t {
            for x in 0..spec.alphabet.len() {
                worst = worst.max((soft.symbol(k)[x] - exact.symbol[k][x]).abs());
            }
        }
    }
    Outcome::new(worst <= 1e-9, format!("100 instances, max deviation {worst:.2e} (tol 1e-9)"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = load("isi_csi_mismatch.json");
    assert!(cfg.trials >= 40 && cfg.frame_len == 100_000);
    let sweep = run_sweep(&cfg, 1).unwrap();
    let db = cfg.sweep_db[0];
    let mismatched = row(&sweep, "bcjr-csi-error", db);
    let hmm = row(&sweep, "bcjr-hmm", db);
    let full = row(&sweep, "full-csi", db);
    let ratio = mismatched.ber() / hmm.ber();
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        ratio >= 1.6 && secs < 900.0,
        format!(
            "mismatched {} / hmm {} = {ratio:.2} (need >= 1.6), full csi {}; {secs:.0} s (target < 900 s)",
            ber_text(mismatched),
            ber_text(hmm),
            ber_text(full)
        ),
    )
}

fn criterion_4() -> Outcome {
    let cfg = load("overprovisioned_awgn.json");
    let sweep = run_sweep(&cfg, 1).unwrap();
    let db = 4.0;
    let full = row(&sweep, "full-csi", db).ber();
    let hmm = row(&sweep, "bcjr-hmm", db).ber();
    let nn = row(&sweep, "bcjr-nn", db).ber();
    let hybrid = row(&sweep, "bcjr-hmm-nn", db).ber();
    let pass = hmm <= 1.3 * full && nn >= 1.5 * full && hybrid <= 1.3 * full;
    Outcome::new(
        pass,
        format!(
            "full {} | hmm {:.2}x (<= 1.3) | nn {:.2}x (>= 1.5) | hybrid {:.2}x (<= 1.3)",
            ber_text(row(&sweep, "full-csi", db)),
            hmm / full,
            nn / full,
            hybrid / full
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = load("isi_bursty_noise.json");
    let sweep = run_sweep(&cfg, 1).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for db in [3.0, 5.0, 7.0] {
        let full = row(&sweep, "full-csi", db).ber();
        let hmm = row(&sweep, "bcjr-hmm", db).ber();
        let nn = row(&sweep, "bcjr-nn", db).ber();
        let reduced = row(&sweep, "bcjr-nn-n1", db).ber();
        let conv = row(&sweep, "bcjr-n1", db).ber();
        let mut checks = vec![
            ("full<=hmm", full <= hmm),
            ("hmm<=1.35full", hmm <= 1.35 * full),
            ("full<=nn", full <= nn),
            ("nn<=1.35full", nn <= 1.35 * full),
            ("nn-n1<conv-n1", reduced < conv),
        ];
        if db == 7.0 {
            checks.push(("conv-n1>=3full", conv >= 3.0 * full));
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        pass &= failed.is_empty();
        parts.push(format!(
            "{db} dB full {full:.2e} hmm {hmm:.2e} nn {nn:.2e} nn-n1 {reduced:.2e} conv-n1 {conv:.2e}{}",
            if failed.is_empty() { String::new() } else { format!(" [failed: {}]", failed.join(", ")) }
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let base = load("gamma_sensitivity.json");
    let db = base.sweep_db[0];
    let mut rows = Vec::new();
    for gamma in [0.01, 0.1, 1.0] {
        let mut cfg = base.clone();
        cfg.channel.background_ratio = gamma;
        let sweep = run_sweep(&cfg, 1).unwrap();
        rows.push((row(&sweep, "bcjr-n1", db).clone(), row(&sweep, "bcjr-nn-n1", db).clone()));
    }
    let ratio = |(conv, nn): &(ResultRow, ResultRow)| conv.ber() / nn.ber();
    let (r001, r01) = (ratio(&rows[0]), ratio(&rows[1]));
    let (conv1, nn1) = &rows[2];
    let sigma = (conv1.stderr_ber().powi(2) + nn1.stderr_ber().powi(2)).sqrt();
    let diff = (conv1.ber() - nn1.ber()).abs();
    let ordered = r001 > r01;
    let agree = diff <= 3.0 * sigma;
    let counts = |(c, n): &(ResultRow, ResultRow)| format!("{}/{}", c.bit_errors, n.bit_errors);
    Outcome::new(
        ordered && agree,
        format!(
            "conv/nn ratio at {db} dB: gamma 0.01 {r001:.3} ({}) vs gamma 0.1 {r01:.3} ({}); gamma 1: |{:.3e} - {:.3e}| = {diff:.2e} vs 3 sigma {:.2e}",
            counts(&rows[0]),
            counts(&rows[1]),
            conv1.ber(),
            nn1.ber(),
            3.0 * sigma
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut r = rng(5);
    let mut monotone = true;
    for k in 0..50u64 {
        let q = 2 + (k as usize) % 3;
        let spec = random_trellis(&mut r, q);
        let (_, y) = sample_hmm(&spec, 400, &mut r);
        let cfg = BaumWelchConfig { num_states: q, max_iters: 150, num_restarts: 1, seed: k, ..Default::default() };
        let out = baum_welch(&y, &cfg).unwrap();
        monotone &= out.loglik_history.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs());
    }

    let noise = MarkovMiddletonParams {
        levels: 2,
        impulsive_index: 0.8,
        background_ratio: 0.01,
        total_power: noise_power_from_db(6.0),
        correlation: 0.98,
    };
    let cfg = ChannelConfig::bpsk(build_isi_profile(1, 1.0, 0.0).unwrap(), noise).unwrap();
    let truth = build_joint_trellis(&cfg).unwrap();
    let mut r = rng(10);
    let tx: Vec<f64> = (0..500_000).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let out = simulate_frame(&cfg, &tx, 99).unwrap();
    let learned = baum_welch(&out.rx, &BaumWelchConfig { num_states: 4, seed: 2, ..Default::default() }).unwrap();
    let al = align_states(&learned.trellis, &truth).unwrap();
    let m = learned.trellis.permuted(&al.inverse()).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((m.transitions[i][j] - truth.transitions[i][j]).abs());
        }
    }
    Outcome::new(
        monotone && worst <= 0.05,
        format!("monotone on 50 instances: {monotone}; max transition error {worst:.4} (tol 0.05, 5e5 samples)"),
    )
}

fn criterion_8() -> Outcome {
    let table = vec![
        vec![0.33, 0.0, 0.0, 0.67],
        vec![0.25, 0.49, 0.13, 0.13],
        vec![0.3, 0.2, 0.32, 0.18],
        vec![0.29, 0.21, 0.16, 0.34],
    ];
    let printed = [0.295, 0.204, 0.127, 0.374];
    let pi = stationary_distribution(&table).unwrap();
    let worst = pi.iter().zip(&printed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Outcome::new(worst <= 0.02, format!("pi = {pi:.3?}, max deviation {worst:.4} (tol 0.02)"))
}

fn flat(p: &NnParams) -> Vec<f64> {
    p.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).cloned().collect::<Vec<_>>()).collect()
}

fn set(p: &mut NnParams, mut k: usize, v: f64) {
    for l in p.layers.iter_mut() {
        let n = l.weights.len();
        if k < n {
            *l.weights.iter_mut().nth(k).unwrap() = v;
            return;
        }
        k -= n;
        if k < l.bias.len() {
            l.bias[k] = v;
            return;
        }
        k -= l.bias.len();
    }
    panic!("parameter index out of range");
}

fn criterion_9() -> Outcome {
    let q = 4;
    let mut r = rng(3);
    let p = NnParams::init(q, 11).unwrap();
    let ys: Vec<f64> = (0..10).map(|_| r.random_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..10).map(|_| r.random_range(0..q)).collect();
    let (_, g) = p.loss_and_grad(&ys, &labels);
    let analytic = flat(&g);
    let base = flat(&p);
    let h = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for idx in 0..base.len() {
        let mut plus = p.clone();
        set(&mut plus, idx, base[idx] + h);
        let mut minus = p.clone();
        set(&mut minus, idx, base[idx] - h);
        let numeric = (plus.loss(&ys, &labels) - minus.loss(&ys, &labels)) / (2.0 * h);
        let scale = analytic[idx].abs().max(numeric.abs()).max(1e-6);
        worst_grad = worst_grad.max((analytic[idx] - numeric).abs() / scale);
    }

    let n = Normal::new(0.0, 1.0).unwrap();
    let mut r = rng(6);
    let ys: Vec<f64> = (0..20_000).map(|_| n.sample(&mut r)).collect();
    let labels: Vec<usize> = (0..20_000).map(|_| r.random_range(0..q)).collect();
    let (trained, _) = train(&ys, &labels, q, &TrainConfig::default(), 2).unwrap();
    let loss = trained.loss(&ys, &labels);
    let loss_gap = (loss - (q as f64).ln()).abs();

    let mut r = rng(1);
    let data: Vec<f64> = (0..1000).map(|_| r.random_range(-2.0..2.0)).collect();
    let gmm = fit_marginal(&data, 3, 0).unwrap();
    let net = NnParams::init(3, 9).unwrap();
    let prior = [0.2, 0.5, 0.3];
    let mut worst_bayes: f64 = 0.0;
    for k in 0..200 {
        let y = -5.0 + 0.05 * k as f64;
        let lik = nn_likelihood(y, &net, &gmm, &prior).unwrap();
        let total: f64 = lik.iter().zip(&prior).map(|(l, s)| l * s).sum();
        worst_bayes = worst_bayes.max((total - gmm.density(y)).abs());
    }
    Outcome::new(
        worst_grad <= 1e-4 && loss_gap <= 0.05 && worst_bayes <= 1e-12,
        format!(
            "{} params, worst relative gradient error {worst_grad:.2e} (tol 1e-4); uninformative loss {loss:.4} vs ln 4 = {:.4} (tol 0.05); Bayes identity error {worst_bayes:.2e} (tol 1e-12)",
            base.len(),
            (q as f64).ln()
        ),
    )
}

fn criterion_10() -> Outcome {
    let code = ConvCodeSpec::default();
    let mut r = rng(77);
    let mut round_trip = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..500);
        let bits: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
        let llrs: Vec<f64> = bits_to_bpsk(&code.encode(&bits)).iter().map(|x| 1e3 * x).collect();
        round_trip += usize::from(code.soft_decode(&llrs).unwrap() == bits);
    }
    let mut linear = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..300);
        let a: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
        let b: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
        let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let expect: Vec<u8> = code.encode(&a).iter().zip(code.encode(&b)).map(|(x, y)| x ^ y).collect();
        linear += usize::from(code.encode(&sum) == expect);
    }
    let dfree = code.free_distance(60);
    Outcome::new(
        round_trip == 1000 && linear == 1000 && dfree.is_some_and(|d| d >= 10),
        format!("round trip {round_trip}/1000, linearity {linear}/1000, d_free {dfree:?} (need >= 10)"),
    )
}

fn criterion_11() -> Outcome {
    let dir = std::env::temp_dir().join(format!("trellis-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = configs_dir().join("smoke.json");
    let run = |jobs: &str| {
        let out = dir.join(format!("jobs{jobs}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_trellis-sim"))
            .arg("run")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(&out).unwrap()
    };
    let a = run("1");
    let b = run("3");
    std::fs::remove_dir_all(&dir).ok();
    let errors = String::from_utf8_lossy(&a).matches("error:").count();
    Outcome::new(
        a == b && errors == 0,
        format!("smoke.json with --jobs 1 and 3: identical {}, {} bytes, {errors} failed rows", a == b, a.len()),
    )
}

fn main() -> ExitCode {
    // criterion 10 checks the code before criterion 3 relies on it
    let order: [(usize, fn() -> Outcome); 11] = [
        (2, criterion_2),
        (8, criterion_8),
        (10, criterion_10),
        (9, criterion_9),
        (1, criterion_1),
        (11, criterion_11),
        (7, criterion_7),
        (3, criterion_3),
        (4, criterion_4),
        (6, criterion_6),
        (5, criterion_5),
    ];
    let mut results = Vec::new();
    for (id, run) in order {
        let start = Instant::now();
        let out = run();
        println!(
            "criterion {id:>2}: {} - {} [{:.0} s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((id, out.pass));
    }
    results.sort();
    let passed = results.iter().filter(|r| r.1).count();
    let failed: Vec<String> = results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {passed}/{} criteria passed{}",
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
