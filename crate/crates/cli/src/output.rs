//! Output artifacts: the run manifest and CSV report writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use acnet_core::error::{Error, Result};
use acnet_core::evalstats::EvalReport;
use acnet_core::pipeline::{diagnostic_maps, DynamicOutcome, ModelState};
use acnet_core::preprocess::{denormalize_matrix, make_windows, SeriesFrame};
use acnet_core::tensor::Tensor;

/// Feature-map dumps keep at most this many channels per map.
const MAX_DIAG_CHANNELS: usize = 8;

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Run manifest: one per command invocation, written alongside the outputs.
pub struct Manifest {
    out_dir: PathBuf,
    header: String,
}

impl Manifest {
    pub fn start(
        command: &str,
        out_dir: &Path,
        dataset: Option<&Path>,
        config: Option<&Path>,
        seed: u64,
    ) -> Result<Manifest> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        let args: Vec<String> = std::env::args().collect();
        let mut header = String::new();
        let _ = writeln!(header, "command = {command}");
        let _ = writeln!(header, "invocation = {}", args.join(" "));
        let _ = writeln!(
            header,
            "dataset = {}",
            dataset.map_or("(none)".into(), |p| p.display().to_string())
        );
        let _ = writeln!(
            header,
            "config_file = {}",
            config.map_or("(none)".into(), |p| p.display().to_string())
        );
        let _ = writeln!(header, "seed = {seed}");
        let _ = writeln!(header, "git = {}", git_describe());
        let _ = writeln!(header, "out_dir = {}", out_dir.display());
        let _ = writeln!(header, "started_unix = {}", unix_now());
        Ok(Manifest {
            out_dir: out_dir.to_path_buf(),
            header,
        })
    }

    pub fn finish(mut self, config_echo: &str) -> Result<()> {
        let _ = writeln!(self.header, "finished_unix = {}", unix_now());
        let mut text = self.header;
        if !config_echo.is_empty() {
            text.push_str("\n[config]\n");
            text.push_str(config_echo);
        }
        write_file(&self.out_dir.join("manifest.txt"), &text)
    }
}

pub fn write_metrics_csv(out: &Path, r: &EvalReport) -> Result<()> {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "mse,{}", r.mse);
    let _ = writeln!(s, "mae,{}", r.mae);
    let _ = writeln!(s, "mape,{}", r.mape);
    let _ = writeln!(s, "rmse,{}", r.rmse);
    let _ = writeln!(s, "windows,{}", r.per_window_errors.len());
    let _ = writeln!(s, "flops_per_window,{}", r.flops_estimate);
    let _ = writeln!(s, "param_count,{}", r.param_count);
    write_file(&out.join(format!("metrics_{}.csv", r.horizon)), &s)
}

pub fn write_errors_csv(out: &Path, r: &EvalReport) -> Result<()> {
    let mut s = String::from("window,mse\n");
    for (i, e) in r.per_window_errors.iter().enumerate() {
        let _ = writeln!(s, "{i},{e}");
    }
    write_file(&out.join(format!("errors_{}.csv", r.horizon)), &s)
}

/// Per-window error trace written by [`write_errors_csv`].
pub fn read_error_trace(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let field = line.split(',').nth(1).ok_or_else(|| Error::Parse {
            row: i + 1,
            message: "expected 'window,mse'".into(),
        })?;
        out.push(field.parse::<f64>().map_err(|_| Error::Parse {
            row: i + 1,
            message: format!("'{field}' is not a number"),
        })?);
    }
    if out.is_empty() {
        return Err(Error::usage(format!(
            "{}: no error rows found",
            path.display()
        )));
    }
    Ok(out)
}

/// Forecast-vs-truth plot data on the test split: one row per
/// (window, step, variable).
pub fn write_forecast_plot_csv(
    out: &Path,
    model: &ModelState,
    frame_raw: &SeriesFrame,
    denorm: bool,
) -> Result<()> {
    let t = frame_raw.num_rows();
    let split = model.cfg.split.apply(t);
    let test_start = split.train + split.val;
    let normalized = model.normalize_rows(&frame_raw.values);
    let frame = SeriesFrame {
        values: normalized,
        var_names: model.var_names.clone(),
        stats: Some(model.stats.clone()),
    };
    let test = frame.slice_rows(test_start, t);
    let windows = make_windows(&test, model.cfg.lookback, model.cfg.horizon, model.cfg.stride)?;
    let mut s = String::from("origin,step,var,forecast,truth\n");
    for w in &windows {
        let mut pred = model.forward(&w.input)?;
        let mut truth = w.target.clone();
        if denorm {
            pred = denormalize_matrix(&pred, &model.stats);
            truth = denormalize_matrix(&truth, &model.stats);
        }
        for step in 0..pred.nrows() {
            for (j, name) in model.var_names.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    test_start + w.origin_index,
                    step,
                    name,
                    pred.at2(step, j),
                    truth.at2(step, j)
                );
            }
        }
    }
    write_file(&out.join(format!("forecast_{}.csv", model.cfg.horizon)), &s)
}

pub fn write_summary(out: &Path, model: &ModelState, reports: &[EvalReport]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "model: seed {}, ablation {}", model.seed, model.cfg.ablation.name());
    let _ = writeln!(s, "parameters: {}", model.param_count());
    let _ = writeln!(s, "baseline mse: {:.6e}", model.baseline_mse);
    for r in reports {
        let _ = writeln!(
            s,
            "horizon {:>4}: mse {:.6} mae {:.6} mape {:.6} rmse {:.6} over {} windows",
            r.horizon, r.mse, r.mae, r.mape, r.rmse,
            r.per_window_errors.len()
        );
    }
    write_file(&out.join("summary.txt"), &s)
}

pub fn write_dynamic_outputs(out: &Path, model: &ModelState, o: &DynamicOutcome) -> Result<()> {
    let mut s = String::from("origin,step,var,forecast\n");
    for (origin, pred) in &o.forecasts {
        for step in 0..pred.nrows() {
            for (j, name) in model.var_names.iter().enumerate() {
                let _ = writeln!(s, "{origin},{step},{name},{}", pred.at2(step, j));
            }
        }
    }
    write_file(&out.join("forecast.csv"), &s)?;

    let mut ev = String::from("chunk,at_row,pre_mse,post_mse\n");
    for e in &o.events {
        let _ = writeln!(ev, "{},{},{},{}", e.chunk_index, e.at_row, e.pre_mse, e.post_mse);
    }
    write_file(&out.join("events.csv"), &ev)?;

    let mut ch = String::from("chunk,mse\n");
    for (i, m) in o.chunk_mse.iter().enumerate() {
        let _ = writeln!(ch, "{i},{m}");
    }
    write_file(&out.join("chunks.csv"), &ch)?;

    // live forecast from the freshest rows, no truth available yet
    if let Some(f) = &o.final_forecast {
        let mut fs = String::from("step,var,forecast\n");
        for step in 0..f.nrows() {
            for (j, name) in model.var_names.iter().enumerate() {
                let _ = writeln!(fs, "{step},{name},{}", f.at2(step, j));
            }
        }
        write_file(&out.join("final_forecast.csv"), &fs)?;
    }
    Ok(())
}

/// Dump every intermediate map for one test window, first 8 channels.
pub fn write_feature_maps(
    diag_dir: &Path,
    model: &ModelState,
    frame_raw: &SeriesFrame,
    window_index: usize,
) -> Result<()> {
    let t = frame_raw.num_rows();
    let split = model.cfg.split.apply(t);
    let test_start = split.train + split.val;
    let normalized = model.normalize_rows(&frame_raw.values);
    let frame = SeriesFrame {
        values: normalized,
        var_names: model.var_names.clone(),
        stats: Some(model.stats.clone()),
    };
    let source = if t - test_start >= model.cfg.lookback + model.cfg.horizon {
        frame.slice_rows(test_start, t)
    } else {
        frame
    };
    let windows = make_windows(&source, model.cfg.lookback, model.cfg.horizon, model.cfg.stride)?;
    let w = windows.get(window_index).ok_or_else(|| {
        Error::usage(format!(
            "window index {window_index} out of range ({} windows)",
            windows.len()
        ))
    })?;
    for (name, map) in diagnostic_maps(model, &w.input)? {
        write_map_csv(&diag_dir.join(format!("{name}.csv")), &map)?;
    }
    Ok(())
}

fn write_map_csv(path: &Path, map: &Tensor) -> Result<()> {
    let mut s = String::new();
    match map.shape().len() {
        2 => {
            let (l, c) = (map.nrows(), map.ncols());
            let cols = c.min(MAX_DIAG_CHANNELS);
            s.push('t');
            for j in 0..cols {
                let _ = write!(s, ",ch{j}");
            }
            s.push('\n');
            for i in 0..l {
                let _ = write!(s, "{i}");
                for j in 0..cols {
                    let _ = write!(s, ",{}", map.at2(i, j));
                }
                s.push('\n');
            }
        }
        3 => {
            let (sc, l, c) = (map.shape()[0], map.shape()[1], map.shape()[2]);
            let cols = c.min(MAX_DIAG_CHANNELS);
            s.push_str("scale,t");
            for j in 0..cols {
                let _ = write!(s, ",ch{j}");
            }
            s.push('\n');
            for a in 0..sc {
                for i in 0..l {
                    let _ = write!(s, "{a},{i}");
                    for j in 0..cols {
                        let _ = write!(s, ",{}", map.at3(a, i, j));
                    }
                    s.push('\n');
                }
            }
        }
        _ => {
            let _ = writeln!(s, "value");
            for v in map.data() {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    write_file(path, &s)
}

pub fn write_phase_csv(diag_dir: &Path, var: &str, tau: usize, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(2, Vec::len);
    let mut s = String::from("x,y");
    if dim == 3 {
        s.push_str(",z");
    }
    s.push('\n');
    for p in points {
        let vals: Vec<String> = p.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", vals.join(","));
    }
    write_file(&diag_dir.join(format!("phase_{var}_tau{tau}.csv")), &s)
}

pub fn write_lookback_csv(out: &Path, rows: &[acnet_core::evalstats::LookbackRow]) -> Result<()> {
    let seeds = rows.first().map_or(0, |r| r.mse_per_seed.len());
    let mut s = String::from("lookback");
    for i in 0..seeds {
        let _ = write!(s, ",mse_seed{i}");
    }
    s.push_str(",mean_mse\n");
    for r in rows {
        let _ = write!(s, "{}", r.lookback);
        for v in &r.mse_per_seed {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", r.mean_mse);
    }
    write_file(&out.join("lookback.csv"), &s)
}
