//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test -p koopdetect --test acceptance -- --nocapture`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use koopdetect::data::{make_windows, split_from_series, DatasetSplit, RawSeries, WindowBatch};
use koopdetect::detect::{
    calibrate_threshold, compute_metrics, evaluate, point_adjust, score_test, windowed_labels,
    ScoreSeries,
};
use koopdetect::encoder::Mode;
use koopdetect::koopman::dmd_least_squares;
use koopdetect::mat::Mat;
use koopdetect::model::{ModelConfig, ModelState};
use koopdetect::spectral::{fit_dominant_spectrum, split_invariant_variant, FrequencySelection};
use koopdetect::synth::{
    gen_linear_system, gen_sine_mixture, inject_anomalies, AnomalySpec, LinearSystemSpec,
};
use koopdetect::train::{load_checkpoint, save_checkpoint, train, TrainConfig};

fn report(name: &str, ok: bool, detail: &str) {
    println!("{name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name} failed: {detail}");
}

/// P1 — decomposition identity on 1000 random windows across channel counts,
/// with the forced alpha = 0 and alpha = 1 limits.
#[test]
fn p1_fft_decomposition_identity() {
    let started = Instant::now();
    let window_len = 100usize;
    let mut worst_identity: f64 = 0.0;
    let mut worst_all_rms: f64 = 0.0;
    let mut checked = 0usize;

    for (m, count) in [(1usize, 334usize), (5, 333), (38, 333)] {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + m as u64);
        let mut windows = Vec::with_capacity(count);
        for _ in 0..count {
            let data: Vec<f64> = (0..window_len * m)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            windows.push(Mat::from_vec(window_len, m, data));
        }
        let batch = WindowBatch {
            windows,
            origins: (0..count).map(|i| i * window_len).collect(),
            labels: None,
            window_len,
        };

        for alpha in [0.0, 0.13, 0.5, 1.0] {
            let sel = fit_dominant_spectrum(&batch, alpha).unwrap();
            for w in &batch.windows {
                let (x_inv, x_var) = split_invariant_variant(w, &sel).unwrap();
                let residual = x_inv.add(&x_var).sub(w).max_abs();
                worst_identity = worst_identity.max(residual);
                if alpha == 0.0 {
                    assert_eq!(x_inv.max_abs(), 0.0, "alpha=0 must zero the invariant part");
                }
                if alpha == 1.0 {
                    let rms = (x_var.sum_squares() / (x_var.rows() * x_var.cols()) as f64).sqrt();
                    worst_all_rms = worst_all_rms.max(rms);
                }
                checked += 1;
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let ok = worst_identity < 1e-9 && worst_all_rms < 1e-8 && elapsed < 10.0;
    report(
        "P1 FFT decomposition identity",
        ok,
        &format!(
            "{checked} splits, max identity residual {worst_identity:.2e}, alpha=1 variant rms {worst_all_rms:.2e}, {elapsed:.1}s"
        ),
    );
}

/// P2 — closed-form operator recovery on noise-free linear systems.
#[test]
fn p2_dmd_oracle_recovery() {
    let started = Instant::now();

    let diag = Mat::from_vec(2, 2, vec![0.9, 0.0, 0.0, 0.5]);
    let series = gen_linear_system(&LinearSystemSpec {
        a: diag.clone(),
        x0: vec![1.0, 1.0],
        steps: 50,
        noise_std: 0.0,
        seed: 0,
    })
    .unwrap();
    let (xt, xn) = koopdetect::data::shift_pair(&series.values).unwrap();
    let k = dmd_least_squares(&xt, &xn).unwrap();
    let diag_err = k.matrix.sub(&diag).max_abs();

    let theta = std::f64::consts::FRAC_PI_4;
    let rot = Mat::from_vec(
        2,
        2,
        vec![theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
    );
    let series = gen_linear_system(&LinearSystemSpec {
        a: rot.clone(),
        x0: vec![1.0, 0.0],
        steps: 80,
        noise_std: 0.0,
        seed: 0,
    })
    .unwrap();
    let (xt, xn) = koopdetect::data::shift_pair(&series.values).unwrap();
    let k = dmd_least_squares(&xt, &xn).unwrap();
    let rot_err = k.matrix.sub(&rot).max_abs();

    // Eigenvalues of the recovered 2x2: complex pair with modulus sqrt(det).
    let m = &k.matrix;
    let tr = m.get(0, 0) + m.get(1, 1);
    let det = m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0);
    let disc = tr * tr - 4.0 * det;
    let eig_err = if disc < 0.0 {
        (det.sqrt() - 1.0).abs()
    } else {
        f64::INFINITY
    };

    let elapsed = started.elapsed().as_secs_f64();
    let ok = diag_err < 1e-8 && rot_err < 1e-8 && eig_err < 1e-6 && elapsed < 5.0;
    report(
        "P2 DMD oracle recovery",
        ok,
        &format!(
            "diag err {diag_err:.2e}, rotation err {rot_err:.2e}, |eig|-1 {eig_err:.2e}, {elapsed:.1}s"
        ),
    );
}

fn toy_state() -> (ModelState<f64>, Vec<Mat<f64>>) {
    let mut cfg = ModelConfig::new(2, 0.3, 0.4, 0.02);
    cfg.window = 8;
    cfg.q = 3;
    cfg.hidden1 = 6;
    cfg.hidden2 = 5;
    let sel_series =
        gen_sine_mixture::<f64>(&[(1.0, 1.0, 0.1), (2.0, 0.4, 0.9)], 8, 4, 2, 0.1, 99).unwrap();
    let sel_batch = make_windows(&sel_series, 8).unwrap();
    let selection = fit_dominant_spectrum(&sel_batch, 0.3).unwrap();
    // Seed 45 puts every ReLU pre-activation clear of zero at the
    // finite-difference step; see the model module's gradient test.
    let state = ModelState::init(cfg, selection, 45).unwrap();
    let series =
        gen_sine_mixture::<f64>(&[(1.0, 1.0, 0.1), (3.0, 0.6, 0.7)], 8, 2, 2, 0.3, 19).unwrap();
    let windows = make_windows(&series, 8).unwrap().windows;
    (state, windows)
}

/// P3 — analytic gradients vs central finite differences at step 1e-3 on the
/// toy configuration (m=2, q=3, L=8, one GRU layer per branch).
#[test]
fn p3_gradient_correctness() {
    let started = Instant::now();
    let (state, windows) = toy_state();
    let (_, grads) = state.batch_loss_grad(&windows, Mode::Eval, 0).unwrap();
    let names = state.param_names();

    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for slot in 0..grads.slots.len() {
        let shape = grads.slots[slot].shape();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let mut plus = state.clone();
                plus.apply_update(|i, m| {
                    if i == slot {
                        let v = m.get(r, c);
                        m.set(r, c, v + h);
                    }
                });
                let mut minus = state.clone();
                minus.apply_update(|i, m| {
                    if i == slot {
                        let v = m.get(r, c);
                        m.set(r, c, v - h);
                    }
                });
                let lp = plus.batch_loss(&windows, Mode::Eval, 0).unwrap().total;
                let lm = minus.batch_loss(&windows, Mode::Eval, 0).unwrap().total;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads.slots[slot].get(r, c);
                let denom = analytic.abs().max(numeric.abs());
                if denom < 1e-8 {
                    continue;
                }
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "{}[{r},{c}]: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})",
                    names[slot]
                );
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let groups = names.len();
    let ok = checked > 200 && elapsed < 60.0;
    report(
        "P3 gradient correctness",
        ok,
        &format!("{checked} entries over {groups} parameter groups, worst rel err {worst:.2e}, {elapsed:.1}s"),
    );
}

/// P4 — limit behaviors of beta, lambda, and alpha, asserted directly.
#[test]
fn p4_limit_behaviors() {
    // beta = 0: invariant-parameter gradients are exactly zero.
    let (mut state, windows) = toy_state();
    state.config.beta = 0.0;
    let (_, grads) = state.batch_loss_grad(&windows, Mode::Eval, 0).unwrap();
    let names = state.param_names();
    let mut inv_grad_max: f64 = 0.0;
    for (name, g) in names.iter().zip(&grads.slots) {
        if name.starts_with("invariant") {
            inv_grad_max = inv_grad_max.max(g.max_abs());
        }
    }

    // lambda = 0: total equals the koopman term exactly.
    let (mut state2, windows2) = toy_state();
    state2.config.lambda = 0.0;
    let loss = state2.batch_loss(&windows2, Mode::Eval, 0).unwrap();
    let lambda_exact = loss.total == loss.koopman && loss.reg > 0.0;

    // alpha = 0: the invariant branch input is identically zero.
    let series = gen_sine_mixture::<f64>(&[(5.0, 1.0, 0.0)], 100, 3, 2, 0.2, 7).unwrap();
    let batch = make_windows(&series, 100).unwrap();
    let sel = fit_dominant_spectrum(&batch, 0.0).unwrap();
    let mut alpha_zero_max: f64 = 0.0;
    for w in &batch.windows {
        let (x_inv, _) = split_invariant_variant(w, &sel).unwrap();
        alpha_zero_max = alpha_zero_max.max(x_inv.max_abs());
    }

    let ok = inv_grad_max == 0.0 && lambda_exact && alpha_zero_max == 0.0;
    report(
        "P4 beta/lambda/alpha limit behaviors",
        ok,
        &format!(
            "beta=0 invariant grad max {inv_grad_max:.1e}, lambda=0 total==koopman {lambda_exact}, alpha=0 invariant input max {alpha_zero_max:.1e}"
        ),
    );
}

/// P5 — threshold and metric oracles.
#[test]
fn p5_threshold_and_metric_oracles() {
    let started = Instant::now();

    // Percentile vs a full-sort oracle on 1e4 random draws.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1usize..300);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let r = rng.random_range(0.01..99.9);
        let scores = ScoreSeries::new(values.clone(), (0..n).collect()).unwrap();
        let t = calibrate_threshold(&scores, r, false).unwrap();

        let mut sorted = values;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p = 100.0 - r;
        let oracle = if sorted.len() == 1 {
            sorted[0]
        } else {
            let rank = p / 100.0 * (sorted.len() - 1) as f64;
            let lo = rank.floor() as usize;
            let frac = rank - lo as f64;
            if lo + 1 < sorted.len() {
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            } else {
                sorted[sorted.len() - 1]
            }
        };
        worst = worst.max((t.delta - oracle).abs());
    }
    let percentile_ok = worst < 1e-12;

    // Metrics vs exhaustive confusion counting for all binary vectors of
    // length <= 12.
    let mut metric_ok = true;
    'outer: for n in 1usize..=12 {
        for fbits in 0u32..(1 << n) {
            for lbits in 0u32..(1 << n) {
                let flags: Vec<u8> = (0..n).map(|i| ((fbits >> i) & 1) as u8).collect();
                let labels: Vec<u8> = (0..n).map(|i| ((lbits >> i) & 1) as u8).collect();
                let m = compute_metrics(&flags, &labels).unwrap();
                let mut tp = 0;
                let mut fp = 0;
                let mut fnc = 0;
                for i in 0..n {
                    match (((fbits >> i) & 1) != 0, ((lbits >> i) & 1) != 0) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fnc += 1,
                        _ => {}
                    }
                }
                let p = if tp + fp > 0 {
                    tp as f64 / (tp + fp) as f64
                } else {
                    0.0
                };
                let r = if tp + fnc > 0 {
                    tp as f64 / (tp + fnc) as f64
                } else {
                    0.0
                };
                let f1 = if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                };
                if (m.tp, m.fp, m.fn_count) != (tp, fp, fnc)
                    || m.precision != p
                    || m.recall != r
                    || m.f1 != f1
                {
                    metric_ok = false;
                    break 'outer;
                }
            }
        }
    }

    // Point adjustment: idempotent and never clears a flag, 1e3 random cases.
    let mut adjust_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1usize..200);
        let flags: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let once = point_adjust(&flags, &labels).unwrap();
        let twice = point_adjust(&once, &labels).unwrap();
        if once != twice || once.iter().zip(&flags).any(|(o, f)| o < f) {
            adjust_ok = false;
            break;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let ok = percentile_ok && metric_ok && adjust_ok && elapsed < 30.0;
    report(
        "P5 threshold/metric oracles",
        ok,
        &format!(
            "percentile worst |err| {worst:.1e}, metrics exhaustive {metric_ok}, point-adjust properties {adjust_ok}, {elapsed:.1}s"
        ),
    );
}

/// The end-to-end synthetic fixture shared by P6 and P7: a three-channel
/// sine mixture, 200 windows of length 100, with 10 spikes injected into the
/// test segment.
struct Fixture {
    split: DatasetSplit<f32>,
    config: ModelConfig,
    train_cfg: TrainConfig,
    r: f64,
}

fn e2e_fixture() -> Fixture {
    let window = 100usize;
    let n_windows = 200usize;
    let m = 3usize;
    // Three window-locked tones plus one between bins: the off-bin tone
    // spreads real structure across the whole spectrum, so the variant
    // branch trains on content well above the noise floor and tolerates the
    // spectral leakage an injected anomaly produces.
    let freqs = [
        (4.0, 1.0, 0.0),
        (11.0, 0.5, 0.7),
        (23.0, 0.25, 1.3),
        (17.5, 0.3, 0.5),
    ];
    let series = gen_sine_mixture::<f32>(&freqs, window, n_windows, m, 0.05, 2024).unwrap();

    // Partition: 128 train / 32 val / 40 test windows.
    let total = series.len();
    let test_len = 40 * window;
    let clean_test = series.slice(total - test_len, total);
    let train_full = series.slice(0, total - test_len);

    // Ten spikes, one per chosen window, jittered but kept strictly inside
    // the window. The magnitude is modest on purpose: the cross-channel L2
    // makes it an easy exceedance for a converged model, while the window
    // transforms (which couple every in-window point through the spectral
    // split) see only a small perturbation.
    let mut rng = ChaCha8Rng::seed_from_u64(77 + 2024);
    let width = 25usize;
    let positions: Vec<usize> = (0..10)
        .map(|i| (1 + 4 * i) * window + rng.random_range(5..window - width - 5))
        .collect();
    let spiked_test =
        inject_anomalies(&clean_test, &AnomalySpec::spikes(positions, 0.6, width)).unwrap();

    let split = split_from_series(train_full, None, spiked_test, 0.2).unwrap();

    let mut config = ModelConfig::new(m, 0.1, 0.1, 1e-3);
    config.window = window;
    config.q = 24;
    config.hidden1 = 32;
    config.hidden2 = 24;
    config.gru_layers_variant = 1;
    config.gru_layers_invariant = 1;
    // Per-window normalization couples an anomaly to every other point in
    // its window (through the window statistics and the spectral filter),
    // which caps pointwise precision on spike fixtures regardless of model
    // quality; the no-normalization ablation row keeps the pipeline causal
    // outside the spectral split, so this fixture runs that configuration.
    config.norm_flags = koopdetect::model::NormFlags {
        var_norm: false,
        var_denorm: false,
        inv_norm: false,
        inv_denorm: false,
    };

    // The published preset pairs batch 128 with thousands of training
    // windows; at 128 fixture windows that would be one optimizer step per
    // epoch, so the batch is scaled down to keep a comparable step count.
    let train_cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        max_epochs: 20,
        patience: 10,
        seed: 7,
        grad_clip: None,
    };

    Fixture {
        split,
        config,
        train_cfg,
        r: 0.25,
    }
}

/// P6 — end-to-end detection on the synthetic fixture: point-adjusted
/// F1 >= 0.90 and raw F1 >= 0.60 at the calibrated threshold.
#[test]
fn p6_end_to_end_synthetic_detection() {
    let started = Instant::now();
    let fixture = e2e_fixture();
    let train_windows = make_windows(&fixture.split.train, fixture.config.window).unwrap();
    let selection = fit_dominant_spectrum(&train_windows, fixture.config.alpha).unwrap();
    let state =
        ModelState::init(fixture.config.clone(), selection, fixture.train_cfg.seed).unwrap();

    let (checkpoint, report_data) = train(state, &fixture.split, &fixture.train_cfg).unwrap();
    let state = checkpoint.state;

    let val_windows = make_windows(&fixture.split.val, fixture.config.window).unwrap();
    let test_windows = make_windows(&fixture.split.test, fixture.config.window).unwrap();
    let val_scores = koopdetect::train::evaluate_val_errors(&state, &val_windows).unwrap();
    let threshold = calibrate_threshold(&val_scores, fixture.r, false).unwrap();
    let test_scores = score_test(&state, &test_windows).unwrap();
    let labels = windowed_labels(&test_windows).unwrap();
    let result = evaluate(&test_scores, &threshold, &labels).unwrap();

    // The largest error must land inside a window that holds an injected
    // anomaly.
    let max_idx = test_scores
        .scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let window_of_max = max_idx / fixture.config.window;
    let window_has_anomaly = labels
        [window_of_max * fixture.config.window..(window_of_max + 1) * fixture.config.window]
        .contains(&1);

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "  [p6 diagnostics] epochs {} adj: p {:.4} r {:.4} f1 {:.4} (tp {} fp {} fn {}); raw: p {:.4} r {:.4} f1 {:.4} (tp {} fp {} fn {}); delta {:.4}",
        report_data.epochs.len(),
        result.adjusted.precision,
        result.adjusted.recall,
        result.adjusted.f1,
        result.adjusted.tp,
        result.adjusted.fp,
        result.adjusted.fn_count,
        result.raw.precision,
        result.raw.recall,
        result.raw.f1,
        result.raw.tp,
        result.raw.fp,
        result.raw.fn_count,
        result.delta,
    );
    let ok = result.adjusted.f1 >= 0.90
        && result.raw.f1 >= 0.60
        && window_has_anomaly
        && elapsed < 600.0;
    report(
        "P6 end-to-end synthetic detection",
        ok,
        &format!(
            "point-adjusted f1 {:.4}, raw f1 {:.4}, max-score window anomalous {window_has_anomaly}, {elapsed:.0}s",
            result.adjusted.f1, result.raw.f1
        ),
    );
}

/// P7 — training sanity on the same fixture: loss decreases, the checkpoint
/// is the best-validation epoch, and save/load round-trips bitwise.
#[test]
fn p7_training_sanity() {
    let fixture = e2e_fixture();
    let train_windows = make_windows(&fixture.split.train, fixture.config.window).unwrap();
    let selection = fit_dominant_spectrum(&train_windows, fixture.config.alpha).unwrap();
    let state =
        ModelState::init(fixture.config.clone(), selection, fixture.train_cfg.seed).unwrap();

    let train_cfg = TrainConfig {
        max_epochs: 6,
        ..fixture.train_cfg.clone()
    };
    let (checkpoint, report_data) = train(state, &fixture.split, &train_cfg).unwrap();

    let decreasing = report_data.epochs[5].train_loss < report_data.epochs[0].train_loss;

    let best = checkpoint.val_loss.unwrap();
    let best_is_min = report_data
        .epochs
        .iter()
        .all(|e| best <= e.val_loss + 1e-12);

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &checkpoint).unwrap();
    let loaded = load_checkpoint::<f32>(dir.path()).unwrap();
    let test_windows = make_windows(&fixture.split.test, fixture.config.window).unwrap();
    let w = &test_windows.windows[0];
    let a = checkpoint.state.forward(w).unwrap();
    let b = loaded.state.forward(w).unwrap();
    let bitwise = a
        .phi_pred
        .data()
        .iter()
        .zip(b.phi_pred.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());

    let ok = decreasing && best_is_min && bitwise;
    report(
        "P7 training sanity",
        ok,
        &format!(
            "epoch5 {:.5} < epoch0 {:.5}: {decreasing}; best-val checkpoint {best_is_min}; bitwise round-trip {bitwise}",
            report_data.epochs[5].train_loss, report_data.epochs[0].train_loss
        ),
    );
}

/// P8 (optional dataset track) — runs only when PSM_DATA_DIR points at a
/// directory with train.npy / test.npy / test_label.npy. Reports the
/// point-adjusted F1 against the published 97.16 with a 5-point band.
#[test]
#[ignore = "optional dataset track; set PSM_DATA_DIR to run"]
fn p8_psm_dataset_track() {
    let Some(dir) = std::env::var_os("PSM_DATA_DIR") else {
        println!("P8 PSM dataset track: SKIPPED (PSM_DATA_DIR not set)");
        return;
    };
    let spec = koopdetect::data::DatasetSpec {
        path: std::path::PathBuf::from(dir),
        format: koopdetect::data::DataFormat::NpyDir,
        dims: 25,
        val_fraction: 0.2,
        test_fraction: 0.0,
        impute_nan: true,
    };
    let split: DatasetSplit<f32> = koopdetect::data::load_dataset(&spec).unwrap();

    let mut config = ModelConfig::new(25, 0.0, 0.5, 1e-3);
    config.window = 100;
    config.gru_layers_variant = 4;
    config.gru_layers_invariant = 2;
    let train_cfg = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };

    let train_windows = make_windows(&split.train, config.window).unwrap();
    let selection = fit_dominant_spectrum(&train_windows, config.alpha).unwrap();
    let state = ModelState::init(config.clone(), selection, train_cfg.seed).unwrap();
    let (checkpoint, _) = train(state, &split, &train_cfg).unwrap();
    let state = checkpoint.state;

    let val_windows = make_windows(&split.val, config.window).unwrap();
    let test_windows = make_windows(&split.test, config.window).unwrap();
    let val_scores = koopdetect::train::evaluate_val_errors(&state, &val_windows).unwrap();
    let threshold = calibrate_threshold(&val_scores, 1.0, false).unwrap();
    let test_scores = score_test(&state, &test_windows).unwrap();
    let labels = windowed_labels(&test_windows).expect("PSM test labels");
    let result = evaluate(&test_scores, &threshold, &labels).unwrap();

    let f1 = result.adjusted.f1 * 100.0;
    let ok = (f1 - 97.16).abs() <= 5.0;
    report(
        "P8 PSM dataset track",
        ok,
        &format!("point-adjusted f1 {f1:.2} vs published 97.16 (5-point band)"),
    );
}

/// Spare sanity on the fixture plumbing itself: labels align with scores.
#[test]
fn fixture_labels_align_with_scores() {
    let fixture = e2e_fixture();
    let test_windows = make_windows(&fixture.split.test, fixture.config.window).unwrap();
    let labels = windowed_labels(&test_windows).unwrap();
    assert_eq!(labels.len(), test_windows.len() * fixture.config.window);
    let mass: usize = labels.iter().map(|&l| l as usize).sum();
    assert_eq!(mass, 250, "10 spikes x width 25");
    let raw_series = RawSeries::<f32>::new(
        fixture.split.test.values.clone(),
        fixture.split.test.labels.clone(),
    )
    .unwrap();
    assert_eq!(raw_series.len(), 4000);
    let _: &FrequencySelection<f32> = &fit_dominant_spectrum(&test_windows, 0.1).unwrap();
}
