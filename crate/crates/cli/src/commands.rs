//! Subcommand implementations shared by the binary and the sweep driver.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use koopdetect::data::{load_dataset, make_windows, DatasetSplit};
use koopdetect::detect::{
    calibrate_threshold, evaluate, score_test, windowed_labels, DetectionResult,
};
use koopdetect::error::{Error, Result};
use koopdetect::model::ModelState;
use koopdetect::spectral::fit_dominant_spectrum;
use koopdetect::train::{
    evaluate_val_errors, load_checkpoint, save_checkpoint, train, Checkpoint, TrainReport,
};
use koopdetect::DefaultScalar;

use crate::config::RunConfig;
use crate::plot;

type S = DefaultScalar;

pub struct TrainOutputs {
    pub checkpoint_dir: PathBuf,
    pub report: TrainReport,
}

pub fn run_train(config: &RunConfig) -> Result<TrainOutputs> {
    config.validate()?;
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir)?;
    config.write_manifest(&out_dir.join("run_manifest.json"))?;

    let split: DatasetSplit<S> = load_dataset(&config.dataset)?;
    let train_windows = make_windows(&split.train, config.model.window)?;
    let selection = fit_dominant_spectrum(&train_windows, config.model.alpha)?;
    let state = ModelState::init(config.model.clone(), selection, config.train.seed)?;
    let param_count = state.param_count();
    println!(
        "training: {} windows of {}x{}, {} parameters",
        train_windows.len(),
        config.model.window,
        config.model.m,
        param_count
    );

    let started = std::time::Instant::now();
    let (checkpoint, report) = train(state, &split, &config.train)?;
    let elapsed = started.elapsed().as_secs_f64();

    let checkpoint_dir = out_dir.join("checkpoint");
    save_checkpoint(&checkpoint_dir, &checkpoint)?;

    let mut curve = String::from("epoch,train_loss,val_loss\n");
    for e in &report.epochs {
        curve.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    fs::write(out_dir.join("loss_curve.csv"), curve)?;
    plot::line_chart(
        &out_dir.join("loss_curve.svg"),
        "training and validation loss",
        "epoch",
        "loss",
        &[
            (
                "train",
                "#1f77b4",
                report.epochs.iter().map(|e| e.train_loss).collect(),
            ),
            (
                "val",
                "#d62728",
                report.epochs.iter().map(|e| e.val_loss).collect(),
            ),
        ],
    )?;

    let metrics = json!({
        "phase": "train",
        "epochs_run": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "stopped_early": report.stopped_early,
        "param_count": param_count,
        "train_seconds": elapsed,
        "seed": config.train.seed,
    });
    fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("json"),
    )?;

    for e in &report.epochs {
        println!(
            "epoch {:>3}: train {:.6}  val {:.6}",
            e.epoch, e.train_loss, e.val_loss
        );
    }
    if let (Some(best), Some(val)) = (report.best_epoch, report.best_val_loss) {
        println!(
            "best epoch {best} (val {val:.6}); checkpoint at {}",
            checkpoint_dir.display()
        );
    }
    Ok(TrainOutputs {
        checkpoint_dir,
        report,
    })
}

pub struct DetectOutputs {
    pub result: Option<DetectionResult>,
    pub delta: f64,
}

pub fn run_detect(config: &RunConfig, checkpoint_dir: &Path) -> Result<DetectOutputs> {
    config.validate()?;
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir)?;
    config.write_manifest(&out_dir.join("run_manifest.json"))?;

    let checkpoint: Checkpoint<S> = load_checkpoint(checkpoint_dir)?;
    let state = checkpoint.state;
    if state.config.m != config.dataset.dims {
        return Err(Error::Config(format!(
            "checkpoint was trained with m = {}, dataset has {} dims",
            state.config.m, config.dataset.dims
        )));
    }

    let split: DatasetSplit<S> = load_dataset(&config.dataset)?;
    let val_windows = make_windows(&split.val, state.config.window)?;
    let test_windows = make_windows(&split.test, state.config.window)?;

    let val_scores = evaluate_val_errors(&state, &val_windows)?;
    let threshold = calibrate_threshold(
        &val_scores,
        config.detection.r,
        config.detection.literal_percentile,
    )?;
    let test_scores = score_test(&state, &test_windows)?;
    let labels = windowed_labels(&test_windows);

    let result = match &labels {
        Some(labels) => Some(evaluate(&test_scores, &threshold, labels)?),
        None => None,
    };

    // scores.csv: index, score, flag, label.
    let flags = koopdetect::detect::flag(&test_scores, &threshold);
    let mut csv = String::from(if labels.is_some() {
        "index,score,flag,label\n"
    } else {
        "index,score,flag\n"
    });
    for (i, (&idx, &score)) in test_scores
        .time_index
        .iter()
        .zip(&test_scores.scores)
        .enumerate()
    {
        match &labels {
            Some(l) => csv.push_str(&format!("{idx},{score},{},{}\n", flags[i], l[i])),
            None => csv.push_str(&format!("{idx},{score},{}\n", flags[i])),
        }
    }
    fs::write(out_dir.join("scores.csv"), csv)?;

    let delta = threshold.delta as f64;
    let metrics = match &result {
        Some(r) => {
            let headline = if config.detection.point_adjust {
                &r.adjusted
            } else {
                &r.raw
            };
            json!({
                "phase": "detect",
                "precision": headline.precision,
                "recall": headline.recall,
                "f1": headline.f1,
                "tp": headline.tp,
                "fp": headline.fp,
                "fn": headline.fn_count,
                "r": config.detection.r,
                "delta": delta,
                "adjusted": config.detection.point_adjust,
                "raw": r.raw,
                "point_adjusted": r.adjusted,
            })
        }
        None => json!({
            "phase": "detect",
            "labels_available": false,
            "r": config.detection.r,
            "delta": delta,
            "adjusted": config.detection.point_adjust,
            "flagged": flags.iter().map(|&f| f as usize).sum::<usize>(),
        }),
    };
    fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("json"),
    )?;

    let score_f64: Vec<f64> = test_scores.scores.iter().map(|&s| s as f64).collect();
    plot::score_chart(
        &out_dir.join("score_plot.svg"),
        "prediction error vs threshold",
        &score_f64,
        delta,
        labels.as_deref(),
    )?;

    match &result {
        Some(r) => {
            let headline = if config.detection.point_adjust {
                &r.adjusted
            } else {
                &r.raw
            };
            println!(
                "r = {}, delta = {delta:.6}: precision {:.4}, recall {:.4}, f1 {:.4} ({})",
                config.detection.r,
                headline.precision,
                headline.recall,
                headline.f1,
                if config.detection.point_adjust {
                    "point-adjusted"
                } else {
                    "raw"
                },
            );
            println!(
                "raw: p {:.4} r {:.4} f1 {:.4}; point-adjusted: p {:.4} r {:.4} f1 {:.4}",
                r.raw.precision,
                r.raw.recall,
                r.raw.f1,
                r.adjusted.precision,
                r.adjusted.recall,
                r.adjusted.f1
            );
        }
        None => println!(
            "r = {}, delta = {delta:.6}: no labels in test partition; wrote scores only",
            config.detection.r
        ),
    }
    Ok(DetectOutputs { result, delta })
}

pub fn default_grid(param: &str) -> Result<Vec<f64>> {
    match param {
        "alpha" => Ok(vec![0.0, 0.1, 0.5, 1.0]),
        "beta" => Ok(vec![0.0, 0.1, 0.3, 0.5, 0.8, 1.0]),
        "lambda" => Ok(vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1]),
        "r" => Ok(vec![0.5, 1.0, 4.0, 5.0]),
        other => Err(Error::Config(format!(
            "unknown sweep parameter {other:?}; expected alpha, beta, lambda, or r"
        ))),
    }
}

pub struct SweepRow {
    pub value: f64,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub raw_f1: Option<f64>,
    pub delta: Option<f64>,
    pub status: String,
}

pub fn run_sweep(base: &RunConfig, param: &str, grid: &[f64]) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let sweep_dir = base.out_dir.join("sweep");
    fs::create_dir_all(&sweep_dir)?;

    let mut rows = Vec::new();
    for &value in grid {
        let mut config = base.clone();
        match param {
            "alpha" => config.model.alpha = value,
            "beta" => config.model.beta = value,
            "lambda" => config.model.lambda = value,
            "r" => config.detection.r = value,
            _ => return Err(Error::Config(format!("unknown sweep parameter {param:?}"))),
        }
        config.out_dir = sweep_dir.join(format!("{param}_{value}"));
        println!("=== sweep {param} = {value} ===");
        let outcome = run_train(&config).and_then(|t| run_detect(&config, &t.checkpoint_dir));
        match outcome {
            Ok(out) => {
                let (f1, precision, recall, raw_f1) = match &out.result {
                    Some(r) => {
                        let headline = if config.detection.point_adjust {
                            &r.adjusted
                        } else {
                            &r.raw
                        };
                        (
                            Some(headline.f1),
                            Some(headline.precision),
                            Some(headline.recall),
                            Some(r.raw.f1),
                        )
                    }
                    None => (None, None, None, None),
                };
                rows.push(SweepRow {
                    value,
                    f1,
                    precision,
                    recall,
                    raw_f1,
                    delta: Some(out.delta),
                    status: "ok".into(),
                });
            }
            Err(e) => {
                eprintln!("sweep point {param} = {value} failed: {e}");
                rows.push(SweepRow {
                    value,
                    f1: None,
                    precision: None,
                    recall: None,
                    raw_f1: None,
                    delta: None,
                    status: format!("error: {e}"),
                });
            }
        }
    }

    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    let mut csv = String::from("param,value,f1,precision,recall,raw_f1,delta,status\n");
    for row in &rows {
        csv.push_str(&format!(
            "{param},{},{},{},{},{},{},{}\n",
            row.value,
            fmt(row.f1),
            fmt(row.precision),
            fmt(row.recall),
            fmt(row.raw_f1),
            fmt(row.delta),
            row.status.replace(',', ";")
        ));
    }
    fs::write(sweep_dir.join("sweep.csv"), csv)?;

    let best = rows
        .iter()
        .filter(|r| r.f1.is_some())
        .max_by(|a, b| a.f1.partial_cmp(&b.f1).expect("finite f1"));
    if let Some(best) = best {
        println!(
            "best {param} = {} (f1 {:.4})",
            best.value,
            best.f1.expect("filtered")
        );
        let summary = json!({
            "param": param,
            "best_value": best.value,
            "best_f1": best.f1,
            "rows": rows.len(),
        });
        fs::write(
            sweep_dir.join("sweep_summary.json"),
            serde_json::to_string_pretty(&summary).expect("json"),
        )?;
    } else {
        println!("no sweep point succeeded");
    }
    Ok(rows)
}
