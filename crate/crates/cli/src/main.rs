//! Command-line pipeline: synthetic data generation, training, detection,
//! and single-parameter ablation sweeps.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use koopdetect::data::DataFormat;
use koopdetect::error::{Error, Result};
use koopdetect::synth::{gen_linear_system, gen_sine_mixture, inject_anomalies, AnomalySpec};
use koopdetect::Mat;

use koopdetect_cli::commands;
use koopdetect_cli::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "koopdetect",
    version,
    about = "Koopman-operator anomaly detection for multivariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic series as CSV (with a label column).
    Synth(SynthArgs),
    /// Fit the frequency selection, train the model, write a checkpoint.
    Train(TrainArgs),
    /// Score a test set against a trained checkpoint and report metrics.
    Detect(DetectArgs),
    /// Train+detect across a hyperparameter grid.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; flags below override file values.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dominant-spectrum fraction in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the time-invariant branch.
    #[arg(long)]
    beta: Option<f64>,
    /// Operator-norm regularization coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    /// Anomaly ratio: percentage of calibration points flagged.
    #[arg(long)]
    r: Option<f64>,
    /// Lookback window length.
    #[arg(long)]
    window: Option<usize>,
    /// Evaluate pointwise, without segment point adjustment.
    #[arg(long)]
    no_point_adjust: bool,
    #[arg(long)]
    data_path: Option<PathBuf>,
    /// Dataset format: csv or npy-dir.
    #[arg(long, value_parser = parse_format)]
    format: Option<DataFormat>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

fn parse_format(s: &str) -> std::result::Result<DataFormat, String> {
    match s {
        "csv" => Ok(DataFormat::Csv),
        "npy-dir" => Ok(DataFormat::NpyDir),
        other => Err(format!("unknown format {other:?}; expected csv or npy-dir")),
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            r: self.r,
            window: self.window,
            no_point_adjust: self.no_point_adjust,
            data_path: self.data_path.clone(),
            format: self.format,
            dims: self.dims,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
        });
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint directory (defaults to `<out>/checkpoint`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which hyperparameter to sweep: alpha, beta, lambda, or r.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values; defaults to the standard grid for the
    /// parameter.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Generator: sine or linear.
    #[arg(long, default_value = "sine")]
    kind: String,
    /// Window length the frequencies are expressed against.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Number of windows' worth of samples to generate.
    #[arg(long, default_value_t = 200)]
    windows: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Sinusoids as freq:amplitude:phase triples, comma-separated.
    #[arg(long, default_value = "5:1:0")]
    freqs: String,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Linear-system preset for --kind linear: rotation or decay.
    #[arg(long, default_value = "rotation")]
    system: String,
    /// Number of spike anomalies injected into the tail region.
    #[arg(long, default_value_t = 0)]
    spikes: usize,
    #[arg(long, default_value_t = 5)]
    spike_width: usize,
    #[arg(long, default_value_t = 8.0)]
    spike_magnitude: f64,
    /// Fraction of the series before which no spikes are placed.
    #[arg(long, default_value_t = 0.7)]
    spike_start: f64,
}

fn parse_freqs(spec: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut out = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return Err(Error::Spec(format!(
                "bad frequency entry {part:?}; expected freq:amplitude:phase"
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Spec(format!("bad number {s:?} in --freqs")))
        };
        out.push((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
    }
    Ok(out)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let total = args.window * args.windows;
    let series = match args.kind.as_str() {
        "sine" => {
            let freqs = parse_freqs(&args.freqs)?;
            gen_sine_mixture::<f64>(
                &freqs,
                args.window,
                args.windows,
                args.channels,
                args.noise,
                args.seed,
            )?
        }
        "linear" => {
            let a = match args.system.as_str() {
                "rotation" => {
                    let theta = 2.0 * std::f64::consts::PI / args.window as f64;
                    Mat::from_vec(
                        2,
                        2,
                        vec![theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
                    )
                }
                "decay" => Mat::from_vec(2, 2, vec![0.995, 0.0, 0.0, 0.98]),
                other => {
                    return Err(Error::Spec(format!(
                        "unknown system {other:?}; expected rotation or decay"
                    )))
                }
            };
            gen_linear_system(&koopdetect::synth::LinearSystemSpec {
                a,
                x0: vec![1.0, 0.0],
                steps: total,
                noise_std: args.noise,
                seed: args.seed,
            })?
        }
        other => {
            return Err(Error::Spec(format!(
                "unknown kind {other:?}; expected sine or linear"
            )))
        }
    };

    let series = if args.spikes > 0 {
        let start = ((total as f64) * args.spike_start) as usize;
        let span = total.saturating_sub(start + args.spike_width);
        if span < args.spikes {
            return Err(Error::Spec(
                "tail region too short for the requested spikes".into(),
            ));
        }
        let positions: Vec<usize> = (0..args.spikes)
            .map(|i| start + i * span / args.spikes)
            .collect();
        inject_anomalies(
            &series,
            &AnomalySpec::spikes(positions, args.spike_magnitude, args.spike_width),
        )?
    } else {
        series
    };

    let m = series.dim();
    let mut csv = String::new();
    for c in 0..m {
        csv.push_str(&format!("ch{c},"));
    }
    csv.push_str("label\n");
    let labels = series.labels.as_deref().unwrap_or(&[]);
    for t in 0..series.len() {
        for c in 0..m {
            csv.push_str(&format!("{},", series.values.get(t, c)));
        }
        csv.push_str(&format!("{}\n", labels.get(t).copied().unwrap_or(0)));
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&args.out, csv)?;
    println!(
        "wrote {} points x {m} channels to {} ({} anomalous)",
        series.len(),
        args.out.display(),
        labels.iter().map(|&l| l as usize).sum::<usize>()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => {
            let config = args.common.resolve()?;
            commands::run_train(&config).map(|_| ())
        }
        Command::Detect(args) => {
            let config = args.common.resolve()?;
            let checkpoint = args
                .checkpoint
                .unwrap_or_else(|| config.out_dir.join("checkpoint"));
            commands::run_detect(&config, &checkpoint).map(|_| ())
        }
        Command::Sweep(args) => {
            let config = args.common.resolve()?;
            let grid = match &args.grid {
                Some(spec) => spec
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad grid value {p:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()?,
                None => commands::default_grid(&args.param)?,
            };
            commands::run_sweep(&config, &args.param, &grid).map(|_| ())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
