//! `acnet` command-line front end: train, evaluate, dynamically forecast,
//! run lookback studies, compare error traces, generate synthetic data and
//! dump diagnostics.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or
//! configuration failure (including unreadable inputs).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acnet_core::config::{Ablation, Mode, PipelineConfig};
use acnet_core::datasets::{self, Generator, SplitSpec, SyntheticSpec};
use acnet_core::error::Error;
use acnet_core::evalstats;
use acnet_core::persist;
use acnet_core::pipeline::{self, UpdatePolicy};
use acnet_core::preprocess::SeriesFrame;

mod output;

#[derive(Parser)]
#[command(name = "acnet", version, about = "Adaptive convolutional forecasting engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random draw.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Input window length L.
    #[arg(long)]
    lookback: Option<usize>,
    /// Forecast horizon L_y.
    #[arg(long)]
    horizon: Option<usize>,
    /// Training mode.
    #[arg(long, value_parser = ["random_feature", "gradient"])]
    mode: Option<String>,
    /// Feature-module ablation.
    #[arg(long, value_parser = ["full", "no_gdc", "no_temporal", "no_all"])]
    ablation: Option<String>,
    /// Wavelet-denoise model inputs.
    #[arg(long, value_parser = ["on", "off"])]
    denoise: Option<String>,
    /// Chronological train:val:test split ratios.
    #[arg(long)]
    split: Option<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            cfg.apply_text(&text)?;
        }
        if let Some(l) = self.lookback {
            cfg.lookback = l;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(m) = &self.mode {
            cfg.mode = Mode::parse(m)?;
        }
        if let Some(a) = &self.ablation {
            cfg.ablation = Ablation::parse(a)?;
        }
        if let Some(d) = &self.denoise {
            cfg.denoise = d == "on";
        }
        if let Some(s) = &self.split {
            cfg.split = SplitSpec::parse(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV series and persist it.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a persisted model on the test split of a CSV series.
    Eval {
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated horizons; each must not exceed the trained one.
        #[arg(long)]
        horizons: Option<String>,
        /// Report metrics in raw units instead of normalized.
        #[arg(long)]
        denorm: bool,
        /// Override the stored train:val:test split when slicing the
        /// evaluation data (e.g. 0:0:1 to score a whole file).
        #[arg(long)]
        split: Option<String>,
    },
    /// Forecast a stream with monitored readout refits.
    Dynamic {
        model: PathBuf,
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Refit when chunk MSE exceeds baseline * (1 + degrade).
        #[arg(long)]
        degrade: Option<f64>,
        /// Scored windows per monitoring chunk.
        #[arg(long)]
        chunk: Option<usize>,
    },
    /// Dump diagnostic CSVs: intermediate feature maps or phase-space clouds.
    Diag {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dump per-layer feature maps (requires --model).
        #[arg(long, conflicts_with = "phase_space")]
        feature_maps: bool,
        /// Dump delay-embedded phase-space point clouds.
        #[arg(long)]
        phase_space: bool,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Window index for the feature-map dump.
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Delay for the phase-space embedding; default: first lag with
        /// autocorrelation below 1/e.
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    /// Train/evaluate across several input window lengths.
    Lookback {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated lookback lengths.
        #[arg(long)]
        lookbacks: String,
        /// Comma-separated seeds, identical across lookbacks.
        #[arg(long, default_value = "42,43,44")]
        seeds: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Paired t-test between two per-window error traces.
    Ttest {
        errors_a: PathBuf,
        errors_b: PathBuf,
    },
    /// Generate a synthetic CSV series.
    Generate {
        /// sine_mix | ar_long_memory | logistic_map | mean_shift
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        vars: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Row index of the level shift (mean_shift only).
        #[arg(long)]
        shift_at: Option<usize>,
    },
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("ACNET_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .ok();
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Usage(_) | Error::Io { .. } | Error::Parse { .. } => {
                    ExitCode::from(2)
                }
                Error::Dim(_) | Error::Numeric(_) => ExitCode::from(1),
            }
        }
    }
}

fn load_frame(path: &Path) -> Result<SeriesFrame, Error> {
    if !path.exists() {
        return Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    datasets::load_csv(path)
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Train { data, out, cfg } => cmd_train(&data, &out, &cfg),
        Command::Eval {
            model,
            data,
            out,
            horizons,
            denorm,
            split,
        } => cmd_eval(&model, &data, &out, horizons.as_deref(), denorm, split.as_deref()),
        Command::Dynamic {
            model,
            stream,
            out,
            degrade,
            chunk,
        } => cmd_dynamic(&model, &stream, &out, degrade, chunk),
        Command::Diag {
            data,
            out,
            feature_maps,
            phase_space,
            model,
            window,
            tau,
            dim,
        } => cmd_diag(&data, &out, feature_maps, phase_space, model.as_deref(), window, tau, dim),
        Command::Lookback {
            data,
            out,
            lookbacks,
            seeds,
            cfg,
        } => cmd_lookback(&data, &out, &lookbacks, &seeds, &cfg),
        Command::Ttest { errors_a, errors_b } => cmd_ttest(&errors_a, &errors_b),
        Command::Generate {
            kind,
            out,
            rows,
            vars,
            seed,
            noise,
            shift_at,
        } => cmd_generate(&kind, &out, rows, vars, seed, noise, shift_at),
    }
}

fn cmd_train(data: &Path, out: &Path, args: &ConfigArgs) -> Result<(), Error> {
    let manifest = output::Manifest::start("train", out, Some(data), args.config.as_deref(), args.seed)?;
    let cfg = args.build()?;
    let frame = load_frame(data)?;
    let outcome = pipeline::train(&cfg, &frame, args.seed)?;
    if !outcome.model.stats.clamped.is_empty() {
        eprintln!(
            "warning: constant variables clamped to the variance floor: {:?}",
            outcome
                .model
                .stats
                .clamped
                .iter()
                .map(|&j| outcome.model.var_names[j].as_str())
                .collect::<Vec<_>>()
        );
    }
    let model_path = out.join("model.acn1");
    persist::save_model(&outcome.model, &model_path)?;
    println!("training windows: {}", outcome.train_windows);
    println!("training time: {:.3}s", outcome.elapsed_s);
    println!("train mse: {:.6e}", outcome.train_mse);
    println!("baseline mse: {:.6e}", outcome.baseline_mse);
    if !outcome.epoch_losses.is_empty() {
        println!(
            "gradient epochs: {} (loss {:.6e} -> {:.6e})",
            outcome.epoch_losses.len(),
            outcome.epoch_losses.first().unwrap(),
            outcome.epoch_losses.last().unwrap()
        );
    }
    println!("model: {}", model_path.display());
    manifest.finish(&cfg.to_canonical_string())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Error::config(format!("bad {what} entry '{p}'")))
        })
        .collect()
}

fn cmd_eval(
    model_path: &Path,
    data: &Path,
    out: &Path,
    horizons: Option<&str>,
    denorm: bool,
    split: Option<&str>,
) -> Result<(), Error> {
    let mut model = persist::load_model(model_path)?;
    let manifest = output::Manifest::start("eval", out, Some(data), None, model.seed)?;
    if let Some(s) = split {
        model.cfg.split = SplitSpec::parse(s)?;
    }
    let frame = load_frame(data)?;
    let horizons: Vec<usize> = match horizons {
        Some(s) => parse_list(s, "horizon")?,
        None => vec![model.cfg.horizon],
    };
    let reports = evalstats::evaluate_model(&model, &frame, &horizons, denorm)?;
    for r in &reports {
        output::write_metrics_csv(out, r)?;
        output::write_errors_csv(out, r)?;
        println!(
            "horizon {}: mse {:.6} mae {:.6} mape {:.6} rmse {:.6} ({} windows, {:.3}s inference)",
            r.horizon,
            r.mse,
            r.mae,
            r.mape,
            r.rmse,
            r.per_window_errors.len(),
            r.elapsed_infer_s
        );
    }
    output::write_forecast_plot_csv(out, &model, &frame, denorm)?;
    output::write_summary(out, &model, &reports)?;
    manifest.finish(&model.cfg.to_canonical_string())
}

fn cmd_dynamic(
    model_path: &Path,
    stream: &Path,
    out: &Path,
    degrade: Option<f64>,
    chunk: Option<usize>,
) -> Result<(), Error> {
    let mut model = persist::load_model(model_path)?;
    let manifest = output::Manifest::start("dynamic", out, Some(stream), None, model.seed)?;
    let frame = load_frame(stream)?;
    let mut policy = UpdatePolicy::from_model(&model);
    if let Some(d) = degrade {
        if d < 0.0 {
            return Err(Error::config("--degrade must be >= 0"));
        }
        policy.degradation_frac = d;
    }
    if let Some(c) = chunk {
        if c == 0 {
            return Err(Error::config("--chunk must be >= 1"));
        }
        policy.eval_chunk = c;
    }
    let outcome = pipeline::dynamic_predict(&mut model, &frame, &policy)?;
    if let Some(w) = &outcome.warning {
        eprintln!("warning: {w}");
    }
    output::write_dynamic_outputs(out, &model, &outcome)?;
    println!(
        "scored windows: {} chunks: {} updates: {}",
        outcome.forecasts.len(),
        outcome.chunk_mse.len(),
        outcome.events.len()
    );
    for ev in &outcome.events {
        println!(
            "update at chunk {} (row {}): mse {:.6} -> {:.6}",
            ev.chunk_index, ev.at_row, ev.pre_mse, ev.post_mse
        );
    }
    manifest.finish(&model.cfg.to_canonical_string())
}

#[allow(clippy::too_many_arguments)]
fn cmd_diag(
    data: &Path,
    out: &Path,
    feature_maps: bool,
    phase_space: bool,
    model_path: Option<&Path>,
    window_index: usize,
    tau: Option<usize>,
    dim: usize,
) -> Result<(), Error> {
    if !feature_maps && !phase_space {
        return Err(Error::usage("diag needs --feature-maps or --phase-space"));
    }
    let manifest = output::Manifest::start("diag", out, Some(data), None, 0)?;
    let frame = load_frame(data)?;
    let diag_dir = out.join("diag");
    std::fs::create_dir_all(&diag_dir)
        .map_err(|e| Error::io(diag_dir.display().to_string(), e))?;

    if feature_maps {
        let model_path =
            model_path.ok_or_else(|| Error::usage("--feature-maps requires --model"))?;
        let model = persist::load_model(model_path)?;
        output::write_feature_maps(&diag_dir, &model, &frame, window_index)?;
        println!("feature maps written to {}", diag_dir.display());
    }
    if phase_space {
        for j in 0..frame.num_vars() {
            let series = frame.column(j);
            let lag = tau.unwrap_or_else(|| evalstats::default_tau(&series));
            let points = evalstats::phase_space(&series, lag, dim)?;
            output::write_phase_csv(&diag_dir, &frame.var_names[j], lag, &points)?;
        }
        println!("phase clouds written to {}", diag_dir.display());
    }
    manifest.finish("")
}

fn cmd_lookback(
    data: &Path,
    out: &Path,
    lookbacks: &str,
    seeds: &str,
    args: &ConfigArgs,
) -> Result<(), Error> {
    let manifest = output::Manifest::start("lookback", out, Some(data), args.config.as_deref(), args.seed)?;
    let cfg = args.build()?;
    let frame = load_frame(data)?;
    let lookbacks: Vec<usize> = parse_list(lookbacks, "lookback")?;
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    let rows = evalstats::lookback_study(&frame, &lookbacks, &cfg, &seeds)?;
    output::write_lookback_csv(out, &rows)?;
    for r in &rows {
        println!("lookback {:>4}: mean mse {:.6}", r.lookback, r.mean_mse);
    }
    manifest.finish(&cfg.to_canonical_string())
}

fn cmd_ttest(errors_a: &Path, errors_b: &Path) -> Result<(), Error> {
    let a = output::read_error_trace(errors_a)?;
    let b = output::read_error_trace(errors_b)?;
    let r = evalstats::paired_ttest(&a, &b)?;
    println!(
        "t = {:.6}, p = {:.6e}, dof = {}, significant at 0.05: {}{}",
        r.t_stat,
        r.p_value,
        r.dof,
        r.significant,
        if r.degenerate { " (degenerate: zero variance)" } else { "" }
    );
    Ok(())
}

fn cmd_generate(
    kind: &str,
    out: &Path,
    rows: usize,
    vars: usize,
    seed: u64,
    noise: f64,
    shift_at: Option<usize>,
) -> Result<(), Error> {
    let manifest = output::Manifest::start("generate", out, None, None, seed)?;
    let mut spec = SyntheticSpec::new(Generator::parse(kind)?, rows, vars, seed).with_noise(noise);
    if let Some(at) = shift_at {
        spec = spec.with_shift_at(at);
    }
    let frame = datasets::generate(&spec)?;
    let path = out.join("data.csv");
    datasets::write_csv(&frame, &path)?;
    println!("wrote {} ({} rows x {} vars)", path.display(), rows, vars);
    manifest.finish("")
}
