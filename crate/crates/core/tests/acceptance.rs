//! Acceptance criteria, one test per criterion. Each test writes a single
//! `criterion N [...]: PASS|FAIL` line straight to stderr (bypassing the
//! test harness capture) and then asserts.
//!
//! Criteria 1-4 need the MotionSense recordings: point
//! `HARKIT_MOTIONSENSE_DIR` at the extracted dataset and run
//! `cargo test --release --test acceptance -- --ignored`. Their runs are
//! kept under `HARKIT_ACCEPTANCE_OUT` (default: cargo's test tmpdir), so an
//! interrupted session picks up where it stopped.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use har_kit::augment::{apply_window, AugmentParams, TransformKind};
use har_kit::config::{self, ExecutionMode, Overrides};
use har_kit::data::split_subjects;
use har_kit::features::FeatureSchema;
use har_kit::metrics::ConfusionMatrix;
use har_kit::nn::gradcheck::{grad_check, GradCheckOptions, GraphProbe};
use har_kit::nn::{LayerSpec, ModelGraph, Padding, Tensor};
use har_kit::pipeline::Workspace;
use har_kit::seed;
use har_kit::ssl::losses::{autoencoder_loss, masked_reconstruction_loss, nt_xent_loss, COSINE_EPS};
use har_kit::ssl::models::classifier_head;
use har_kit::ssl::EncoderConfig;
use har_kit::synthetic::{write_dataset, SyntheticSpec};
use har_kit::windowing::{segment, window_count, WindowParams};
use har_kit::data::SensorStream;

// Reference scores and accepted deviations.
const ECDF_RF_F1: f64 = 0.8184;
const ECDF_RF_TOL: f64 = 0.03;
const SUPERVISED_F1: f64 = 0.851;
const SUPERVISED_TOL: f64 = 0.03;
const SIMCLR_F1: f64 = 0.8317;
const SIMCLR_TOL: f64 = 0.04;
const REDUCED_PRESET_MIN_F1: f64 = 0.75;
const ORDERING_SLACK: f64 = 0.01;
const SEEDS: [u64; 3] = [0, 1, 2];

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET_SECS: f64 = 60.0;
const NT_XENT_TOL: f64 = 1e-6;
const RECON_TOL: f64 = 1e-9;
const PROPERTY_BUDGET_SECS: f64 = 300.0;

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id} [{title}]: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn motionsense() -> Option<PathBuf> {
    std::env::var_os("HARKIT_MOTIONSENSE_DIR").map(PathBuf::from)
}

fn acceptance_out() -> PathBuf {
    std::env::var_os("HARKIT_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

/// Test mean F1 of `preset` on MotionSense with `seed`, reusing a finished
/// run of the same config.
fn preset_f1(preset: &str, seed: u64) -> f64 {
    let cfg = config::load(
        preset,
        &Overrides {
            dataset: motionsense(),
            seed: Some(seed),
            output_dir: Some(acceptance_out().join(format!("{preset}-seed{seed}"))),
            mode: Some(ExecutionMode::Fast),
        },
    )
    .unwrap();
    let status = Workspace::open(cfg, false).unwrap().run().unwrap();
    status.summary().test_mean_f1.expect("test split is not empty")
}

fn mean_over_seeds(preset: &str) -> (f64, Vec<f64>) {
    let scores: Vec<f64> = SEEDS.iter().map(|&s| preset_f1(preset, s)).collect();
    (scores.iter().sum::<f64>() / scores.len() as f64, scores)
}

fn require_dataset(id: u32, title: &str) -> bool {
    if motionsense().is_none() {
        verdict(id, title, false, "HARKIT_MOTIONSENSE_DIR is not set; the recordings are required");
        return false;
    }
    true
}

#[test]
#[ignore = "needs the MotionSense recordings (HARKIT_MOTIONSENSE_DIR)"]
fn criterion_1_ecdf_random_forest() {
    let title = "ECDF + random forest on MotionSense";
    if !require_dataset(1, title) {
        return;
    }
    let start = Instant::now();
    let (mean, scores) = mean_over_seeds("ecdf_motionsense");
    let pass = (mean - ECDF_RF_F1).abs() <= ECDF_RF_TOL;
    verdict(
        1,
        title,
        pass,
        &format!(
            "mean F1 {mean:.4} over seeds {scores:.4?}, reference {ECDF_RF_F1} +/- {ECDF_RF_TOL}, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
#[ignore = "needs the MotionSense recordings (HARKIT_MOTIONSENSE_DIR)"]
fn criterion_2_supervised_conv() {
    let title = "supervised conv classifier on MotionSense";
    if !require_dataset(2, title) {
        return;
    }
    let (mean, scores) = mean_over_seeds("supervised_conv");
    let smoke = preset_f1("supervised_conv_smoke", 0);
    let pass = (mean - SUPERVISED_F1).abs() <= SUPERVISED_TOL && smoke >= REDUCED_PRESET_MIN_F1;
    verdict(
        2,
        title,
        pass,
        &format!(
            "mean F1 {mean:.4} over seeds {scores:.4?}, reference {SUPERVISED_F1} +/- {SUPERVISED_TOL}; smoke preset {smoke:.4} (>= {REDUCED_PRESET_MIN_F1})"
        ),
    );
}

#[test]
#[ignore = "needs the MotionSense recordings (HARKIT_MOTIONSENSE_DIR)"]
fn criterion_3_simclr_frozen_evaluation() {
    let title = "SimCLR pretraining + frozen-encoder classifier on MotionSense";
    if !require_dataset(3, title) {
        return;
    }
    let (mean, scores) = mean_over_seeds("simclr_motionsense");
    let reduced = preset_f1("simclr_reduced", 0);
    let pass = (mean - SIMCLR_F1).abs() <= SIMCLR_TOL && reduced >= REDUCED_PRESET_MIN_F1;
    verdict(
        3,
        title,
        pass,
        &format!(
            "mean F1 {mean:.4} over seeds {scores:.4?}, reference {SIMCLR_F1} +/- {SIMCLR_TOL}; reduced preset {reduced:.4} (>= {REDUCED_PRESET_MIN_F1})"
        ),
    );
}

#[test]
#[ignore = "needs the MotionSense recordings (HARKIT_MOTIONSENSE_DIR)"]
fn criterion_4_method_ordering() {
    let title = "supervised >= SimCLR-frozen >= ECDF-RF";
    if !require_dataset(4, title) {
        return;
    }
    let (sup, _) = mean_over_seeds("supervised_conv");
    let (simclr, _) = mean_over_seeds("simclr_motionsense");
    let (ecdf, _) = mean_over_seeds("ecdf_motionsense");
    let pass = sup - simclr >= -ORDERING_SLACK && simclr - ecdf >= -ORDERING_SLACK;
    verdict(
        4,
        title,
        pass,
        &format!("supervised {sup:.4}, simclr {simclr:.4}, ecdf {ecdf:.4}, slack {ORDERING_SLACK}"),
    );
}

fn random_input(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn criterion_5_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        ("conv valid", vec![LayerSpec::conv(3, 4, 5, Padding::Valid)], vec![3, 12]),
        ("conv same", vec![LayerSpec::conv(3, 4, 4, Padding::Same)], vec![3, 12]),
        (
            "conv transpose",
            vec![LayerSpec::ConvTranspose1d {
                in_channels: 3,
                out_channels: 2,
                kernel: 4,
            }],
            vec![3, 9],
        ),
        ("relu", vec![LayerSpec::conv(3, 4, 3, Padding::Valid), LayerSpec::Relu], vec![3, 10]),
        (
            "dropout",
            vec![LayerSpec::conv(3, 4, 3, Padding::Valid), LayerSpec::Dropout { p: 0.3 }],
            vec![3, 10],
        ),
        (
            "global max pool",
            vec![LayerSpec::conv(3, 4, 3, Padding::Valid), LayerSpec::GlobalMaxPool],
            vec![3, 10],
        ),
        ("dense", vec![LayerSpec::dense(7, 5)], vec![7]),
        (
            "two conv blocks + dense head",
            vec![
                LayerSpec::conv(3, 6, 5, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::conv(6, 8, 3, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::GlobalMaxPool,
                LayerSpec::dense(8, 6),
            ],
            vec![3, 20],
        ),
    ];
    let enc = EncoderConfig::default();
    let mut full = enc.specs(3, Padding::Valid);
    full.extend(classifier_head(enc.embed_dim(), 1024, 6));
    let mut all = cases;
    all.push(("encoder + classifier head", full, vec![3, 100]));

    for (i, (name, specs, shape)) in all.into_iter().enumerate() {
        let graph = ModelGraph::<f64>::new(&specs, &shape, &mut seed::substream(5, "init", i as u64)).unwrap();
        let mut in_shape = vec![2];
        in_shape.extend(&shape);
        let input = random_input(in_shape, &mut rng);
        let mut probe = GraphProbe::new(graph, input, 50 + i as u64);
        let opts = GradCheckOptions {
            max_entries: 400,
            ..GradCheckOptions::default()
        };
        let report = grad_check(&mut probe, opts).unwrap();
        worst = worst.max(report.max_rel_error());
        lines.push(format!("{name}: {:.2e} over {} entries", report.max_rel_error(), report.checked()));
        assert!(report.checked() > 0, "{name}: nothing was checked");
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < GRAD_TOL && secs < GRAD_BUDGET_SECS;
    verdict(
        5,
        "gradient check of every layer kind and the full encoder + head",
        pass,
        &format!("max relative error {worst:.2e} < {GRAD_TOL:.0e}, {secs:.1}s; {}", lines.join("; ")),
    );
}

/// Scalar NT-Xent: every anchor against every other row, no vectorization.
fn nt_xent_oracle(v1: &[Vec<f64>], v2: &[Vec<f64>], tau: f64) -> f64 {
    let rows: Vec<&Vec<f64>> = v1.iter().chain(v2).collect();
    let m = rows.len();
    let n = v1.len();
    let cos = |a: &[f64], b: &[f64]| {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt() + COSINE_EPS;
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt() + COSINE_EPS;
        a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum::<f64>()
    };
    let mut total = 0.0;
    for k in 0..m {
        let pos = if k < n { k + n } else { k - n };
        let mut denom = 0.0;
        for l in 0..m {
            if l != k {
                denom += (cos(rows[k], rows[l]) / tau).exp();
            }
        }
        total += -((cos(rows[k], rows[pos]) / tau).exp() / denom).ln();
    }
    total / m as f64
}

#[test]
fn criterion_6_loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_nt = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=32);
        let tau = rng.random_range(0.05..1.0);
        let v1: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let v2: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let t1 = Tensor::<f64>::new(vec![n, d], v1.concat()).unwrap();
        let t2 = Tensor::<f64>::new(vec![n, d], v2.concat()).unwrap();
        let (got, _, _) = nt_xent_loss(&t1, &t2, tau).unwrap();
        worst_nt = worst_nt.max((got - nt_xent_oracle(&v1, &v2, tau)).abs());
    }

    let mut worst_ae = 0.0f64;
    let mut worst_masked = 0.0f64;
    for _ in 0..100 {
        let (b, c, t) = (rng.random_range(1..6), rng.random_range(1..4), rng.random_range(2..40));
        let len = b * c * t;
        let target: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let recon: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let keep: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
        let tt = Tensor::<f64>::new(vec![b, c, t], target.clone()).unwrap();
        let rt = Tensor::<f64>::new(vec![b, c, t], recon.clone()).unwrap();

        let mut per_window = 0.0;
        for w in 0..b {
            let mut s = 0.0;
            for i in w * c * t..(w + 1) * c * t {
                s += (target[i] - recon[i]) * (target[i] - recon[i]);
            }
            per_window += s;
        }
        let ae_oracle = per_window / b as f64;
        let (ae, _) = autoencoder_loss(&tt, &rt).unwrap();
        worst_ae = worst_ae.max((ae - ae_oracle).abs());

        let mut s = 0.0;
        let mut count = 0usize;
        for i in 0..len {
            if !keep[i] {
                s += (target[i] - recon[i]) * (target[i] - recon[i]);
                count += 1;
            }
        }
        let masked_oracle = if count == 0 { 0.0 } else { s / count as f64 };
        let (masked, _) = masked_reconstruction_loss(&tt, &rt, &keep).unwrap();
        worst_masked = worst_masked.max((masked - masked_oracle).abs());
    }
    let pass = worst_nt <= NT_XENT_TOL && worst_ae <= RECON_TOL && worst_masked <= RECON_TOL;
    verdict(
        6,
        "loss functions against scalar oracles",
        pass,
        &format!(
            "NT-Xent max |diff| {worst_nt:.1e} (<= {NT_XENT_TOL:.0e}), autoencoder {worst_ae:.1e}, masked {worst_masked:.1e} (<= {RECON_TOL:.0e})"
        ),
    );
}

fn brute_force_windows(len: usize, win: usize, step: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start + win <= len {
        count += 1;
        start += step;
    }
    count
}

fn synthetic_supervised_run(dir: &std::path::Path, data: &std::path::Path, out: &str) -> PathBuf {
    let cfg_path = dir.join("two_epochs.toml");
    std::fs::write(
        &cfg_path,
        "pipeline = \"supervised_conv\"\n[classifier.train]\nepochs = 2\nbatch_size = 128\n",
    )
    .unwrap();
    let out = dir.join(out);
    let status = Command::new(env!("CARGO_BIN_EXE_har-kit"))
        .args(["run", "--deterministic", "--config"])
        .arg(&cfg_path)
        .arg("--dataset")
        .arg(data)
        .arg("--output")
        .arg(&out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    out
}

#[test]
fn criterion_7_property_suites() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures: Vec<String> = Vec::new();

    // ECDF quantiles are sorted and the features ignore time order
    let schema = FeatureSchema::Ecdf { n_quantiles: 25 };
    for case in 0..1000 {
        let t = rng.random_range(2..200);
        let ties = rng.random_bool(0.3);
        let window: Vec<f64> = (0..t * 3)
            .map(|_| {
                if ties {
                    rng.random_range(-3..3) as f64
                } else {
                    rng.random_range(-5.0..5.0)
                }
            })
            .collect();
        let f = schema.extract(&window, 3).unwrap();
        for ch in f.chunks(26) {
            if ch[..25].windows(2).any(|p| p[0] > p[1]) {
                failures.push(format!("ECDF quantiles not monotone in case {case}"));
            }
        }
        let mut order: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<f64> = order.iter().flat_map(|&s| window[s * 3..s * 3 + 3].to_vec()).collect();
        let g = schema.extract(&permuted, 3).unwrap();
        let same = f.iter().zip(&g).enumerate().all(|(i, (a, b))| {
            if i % 26 == 25 {
                // the channel mean is a floating sum, so allow reassociation
                (a - b).abs() <= 1e-12 * a.abs().max(1.0)
            } else {
                a == b
            }
        });
        if !same {
            failures.push(format!("ECDF features changed under time permutation in case {case}"));
        }
    }

    // rotations keep every sample's norm; negate and time_flip are involutions
    let params = AugmentParams::default();
    let mut aug_rng = seed::substream(7, "augment", 0);
    for case in 0..500 {
        let t = rng.random_range(1..64);
        let window: Vec<f64> = (0..t * 3).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut rotated = window.clone();
        apply_window(TransformKind::Rotate3d, &params, &mut rotated, t, 3, &mut aug_rng).unwrap();
        for (a, b) in window.chunks(3).zip(rotated.chunks(3)) {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (na - nb).abs() > 1e-9 * na.max(1.0) {
                failures.push(format!("rotation changed a norm in case {case}"));
            }
        }
        for kind in [TransformKind::Negate, TransformKind::TimeFlip] {
            let mut twice = window.clone();
            apply_window(kind, &params, &mut twice, t, 3, &mut aug_rng).unwrap();
            apply_window(kind, &params, &mut twice, t, 3, &mut aug_rng).unwrap();
            if twice != window {
                failures.push(format!("{kind} applied twice is not the identity in case {case}"));
            }
        }
    }

    // window-count formula and the segmenter against enumeration
    for _ in 0..2000 {
        let len = rng.random_range(0..400);
        let win = rng.random_range(1..80);
        let step = rng.random_range(1..=win);
        let expected = brute_force_windows(len, win, step);
        if window_count(len, win, step) != expected {
            failures.push(format!("window_count({len}, {win}, {step}) != {expected}"));
        }
        if len > 0 {
            let stream = SensorStream::new(1, vec![vec![0.0; len]; 3], vec![2; len], 50.0).unwrap();
            let got = segment(&stream, &WindowParams::new(win, step)).unwrap().len();
            if got != expected {
                failures.push(format!("segment gave {got} windows for ({len}, {win}, {step}), expected {expected}"));
            }
        }
    }

    // merged confusion matrices equal the matrix of the concatenated data
    for case in 0..200 {
        let n = rng.random_range(1..300);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let cut = rng.random_range(0..=n);
        let names = har_kit::data::class_names();
        let whole = ConfusionMatrix::from_predictions(&preds, &truth, names.clone()).unwrap();
        let mut merged = ConfusionMatrix::from_predictions(&preds[..cut], &truth[..cut], names.clone()).unwrap();
        merged
            .merge(&ConfusionMatrix::from_predictions(&preds[cut..], &truth[cut..], names).unwrap())
            .unwrap();
        if merged != whole || merged.mean_f1().unwrap() != whole.mean_f1().unwrap() {
            failures.push(format!("merge identity broken in case {case}"));
        }
    }

    // two deterministic 2-epoch supervised runs produce identical files
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(
        &data,
        &SyntheticSpec {
            subjects: 10,
            seconds_per_trial: 10.0,
            ..Default::default()
        },
    )
    .unwrap();
    let a = synthetic_supervised_run(tmp.path(), &data, "a");
    let b = synthetic_supervised_run(tmp.path(), &data, "b");
    for file in ["report.jsonl", "summary.json", "confusion.csv", "model.ckpt"] {
        let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        if x != y {
            failures.push(format!("{file} differs between identical deterministic runs"));
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < PROPERTY_BUDGET_SECS;
    failures.truncate(5);
    verdict(
        7,
        "property suites and deterministic reproducibility",
        pass,
        &if failures.is_empty() {
            format!("1000 ECDF windows, 500 transform cases, 2000 window counts, 200 merges, bitwise-equal reruns; {secs:.1}s")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn criterion_8_split_sizes() {
    let ids: Vec<u32> = (1..=24).collect();
    let cfg = config::load(
        "ecdf_motionsense",
        &Overrides {
            dataset: Some("unused".into()),
            ..Default::default()
        },
    )
    .unwrap();
    let mut bad = Vec::new();
    for s in 0..500u64 {
        let split = split_subjects(&ids, cfg.split.test_frac, cfg.split.val_frac, s).unwrap();
        if split.sizes() != (15, 4, 5) {
            bad.push((s, split.sizes()));
        }
        split.check_disjoint().unwrap();
    }
    verdict(
        8,
        "24 subjects split into (15, 4, 5)",
        bad.is_empty(),
        &format!("500 seeds with fractions ({}, {}); mismatches {bad:?}", cfg.split.test_frac, cfg.split.val_frac),
    );
}
