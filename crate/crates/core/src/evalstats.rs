//! Metrics, rolling-origin evaluation, paired significance testing,
//! lookback studies and phase-space diagnostics.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::{self, ModelState, TrainOutcome};
use crate::preprocess::{denormalize_matrix, make_windows, SeriesFrame};
use crate::tensor::Tensor;

/// Targets with magnitude below this floor are excluded from MAPE.
pub const MAPE_FLOOR: f64 = 1e-4;

/// Error metrics over a set of aligned forecast/truth windows.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean |error / truth| over entries with |truth| > [`MAPE_FLOOR`].
    pub mape: f64,
    pub rmse: f64,
    /// Per-window MSE in window order.
    pub per_window_mse: Vec<f64>,
}

/// Standard definitions over all elements of all windows.
pub fn metrics(preds: &[Tensor], truths: &[Tensor]) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::usage("metrics needs matching non-empty window sets"));
    }
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut count = 0usize;
    let mut ape = 0.0;
    let mut ape_count = 0usize;
    let mut per_window = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(truths) {
        if p.shape() != t.shape() {
            return Err(Error::dim("forecast and truth shapes differ"));
        }
        let mut wsq = 0.0;
        for (a, b) in p.data().iter().zip(t.data()) {
            let e = a - b;
            wsq += e * e;
            abs += e.abs();
            if b.abs() > MAPE_FLOOR {
                ape += (e / b).abs();
                ape_count += 1;
            }
        }
        sq += wsq;
        count += p.len();
        per_window.push(wsq / p.len() as f64);
    }
    let mse = sq / count as f64;
    Ok(Metrics {
        mse,
        mae: abs / count as f64,
        mape: if ape_count > 0 { ape / ape_count as f64 } else { 0.0 },
        rmse: mse.sqrt(),
        per_window_mse: per_window,
    })
}

/// One evaluation report per forecast horizon.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub per_window_errors: Vec<f64>,
    pub elapsed_train_s: f64,
    pub elapsed_infer_s: f64,
    pub flops_estimate: u64,
    pub param_count: u64,
}

/// Rolling evaluation on the test slice of `frame_raw` (per the model's
/// split), one report per requested horizon. Each horizon must not exceed
/// the trained horizon; shorter horizons score the leading rows of each
/// forecast. Metrics are in normalized units unless `denormalized`.
pub fn evaluate_model(
    model: &ModelState,
    frame_raw: &SeriesFrame,
    horizons: &[usize],
    denormalized: bool,
) -> Result<Vec<EvalReport>> {
    if horizons.is_empty() {
        return Err(Error::usage("no horizons requested"));
    }
    let ly = model.cfg.horizon;
    for &h in horizons {
        if h == 0 || h > ly {
            return Err(Error::config(format!(
                "horizon {h} incompatible with model horizon {ly}"
            )));
        }
    }
    let t = frame_raw.num_rows();
    let split = model.cfg.split.apply(t);
    let test_start = split.train + split.val;
    if t - test_start < model.cfg.lookback + ly {
        return Err(Error::config(format!(
            "test slice of {} rows cannot fit one window",
            t - test_start
        )));
    }
    let normalized = model.normalize_rows(&frame_raw.values);
    let frame = SeriesFrame {
        values: normalized,
        var_names: model.var_names.clone(),
        stats: Some(model.stats.clone()),
    };
    let test = frame.slice_rows(test_start, t);
    let windows = make_windows(&test, model.cfg.lookback, ly, model.cfg.stride)?;

    let started = Instant::now();
    let preds: Vec<Tensor> = windows
        .par_iter()
        .map(|w| model.forward(&w.input))
        .collect::<Result<_>>()?;
    let elapsed_infer = started.elapsed().as_secs_f64();

    let n = model.n_vars();
    let mut reports = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let take = |m: &Tensor| Tensor::new(vec![h, n], m.data()[..h * n].to_vec());
        let mut p: Vec<Tensor> = preds.iter().map(&take).collect();
        let mut y: Vec<Tensor> = windows.iter().map(|w| take(&w.target)).collect();
        if denormalized {
            p = p.iter().map(|m| denormalize_matrix(m, &model.stats)).collect();
            y = y.iter().map(|m| denormalize_matrix(m, &model.stats)).collect();
        }
        let m = metrics(&p, &y)?;
        reports.push(EvalReport {
            horizon: h,
            mse: m.mse,
            mae: m.mae,
            mape: m.mape,
            rmse: m.rmse,
            per_window_errors: m.per_window_mse,
            elapsed_train_s: 0.0,
            elapsed_infer_s: elapsed_infer,
            flops_estimate: flops_per_window(&model.cfg, n),
            param_count: model.param_count() as u64,
        });
    }
    Ok(reports)
}

/// Multiply-add count of one forward pass, term by term.
pub fn flops_per_window(cfg: &PipelineConfig, n_vars: usize) -> u64 {
    let l = cfg.lookback as u64;
    let c = cfg.channels as u64;
    let n = n_vars as u64;
    let k = cfg.kernel_len as u64;
    let kp = cfg.pool_kernel_len as u64;
    let p = cfg.resolved_pool_out_len() as u64;
    let (kh, kw) = (cfg.grid.0 as u64, cfg.grid.1 as u64);
    let taps = kh * kw;
    let s = cfg.dilations.len() as u64 + 1;
    let d_feat = pipeline::feature_dim(cfg, n_vars) as u64;
    let hidden = cfg.hidden.unwrap_or_else(|| {
        crate::readout::default_hidden_width(d_feat as usize)
    }) as u64;
    let q = cfg.horizon as u64 * n;

    let mut total = 0u64;
    if cfg.ablation.uses_temporal() {
        // dilated branches: conv + LN + relu per branch
        total += cfg.dilations.len() as u64 * (l * c * n * k + 4 * l * c);
        // pool branch: pooling, conv, upsample
        total += l * n + p * c * n * kp + 2 * l * c;
        // fusion
        total += s * l * c;
    }
    if cfg.ablation.uses_deform() {
        // offset and gate nets
        total += s * l * (2 * taps) * (c * taps);
        total += s * l * (c * taps);
        // bilinear sampling: 4 corner reads + 3 lerps + tap weight, per tap/channel
        total += s * l * c * taps * 8;
        // mixing + residual + scale mean
        total += s * l * c * c + 2 * s * l * c;
    }
    // readout: hidden affine + sigmoid, then the output product
    total += hidden * d_feat + hidden + hidden * q;
    total
}

/// Outcome of a paired two-sample t-test on per-window errors.
#[derive(Debug, Clone)]
pub struct TTestResult {
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: f64,
    pub significant: bool,
    /// Zero variance of differences: the statistic is not well defined.
    pub degenerate: bool,
}

/// Paired t-test of `errors_a` against `errors_b` (per-window pairing).
/// Two-sided p-value from the t CDF via the continued-fraction incomplete
/// beta function.
pub fn paired_ttest(errors_a: &[f64], errors_b: &[f64]) -> Result<TTestResult> {
    let n = errors_a.len();
    if n < 2 || errors_b.len() != n {
        return Err(Error::usage("paired t-test needs two equal series of length >= 2"));
    }
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let dof = n as f64 - 1.0;
    if sd < 1e-300 {
        // all differences identical: no spread to test against
        let (t, p) = if mean.abs() < 1e-300 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY * mean.signum(), 0.0)
        };
        return Ok(TTestResult {
            t_stat: t,
            p_value: p,
            dof,
            significant: p < 0.05,
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let p = student_t_two_sided_p(t, dof);
    Ok(TTestResult {
        t_stat: t,
        p_value: p,
        dof,
        significant: p < 0.05,
        degenerate: false,
    })
}

/// Two-sided p-value of the t distribution: `I_{v/(v+t^2)}(v/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// Lanczos log-gamma.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Regularized incomplete beta via the Lentz continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Delay-embedded point cloud: rows `(x(t), x(t+tau)[, x(t+2 tau)])`.
pub fn phase_space(series: &[f64], tau: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if tau == 0 {
        return Err(Error::config("phase-space lag tau must be >= 1"));
    }
    if !(2..=3).contains(&dim) {
        return Err(Error::config("phase-space dimension must be 2 or 3"));
    }
    let t = series.len();
    let span = tau * (dim - 1);
    if t <= span {
        return Err(Error::config(format!(
            "series of {t} points too short for tau {tau}, dim {dim}"
        )));
    }
    let count = t - span;
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        points.push((0..dim).map(|d| series[i + d * tau]).collect());
    }
    Ok(points)
}

/// Default delay: first lag where the autocorrelation drops below 1/e.
pub fn default_tau(series: &[f64]) -> usize {
    let t = series.len();
    if t < 4 {
        return 1;
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let var: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var < 1e-300 {
        return 1;
    }
    let threshold = 1.0 / std::f64::consts::E;
    for lag in 1..t / 2 {
        let num: f64 = (0..t - lag)
            .map(|i| (series[i] - mean) * (series[i + lag] - mean))
            .sum();
        if num / var < threshold {
            return lag;
        }
    }
    1
}

/// One row of the lookback study.
#[derive(Debug, Clone)]
pub struct LookbackRow {
    pub lookback: usize,
    pub mse_per_seed: Vec<f64>,
    pub mean_mse: f64,
}

/// Train and evaluate one model per (lookback, seed) with otherwise
/// identical configuration; identical seed lists across lookbacks.
pub fn lookback_study(
    frame: &SeriesFrame,
    lookbacks: &[usize],
    base_cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<LookbackRow>> {
    if lookbacks.is_empty() || seeds.is_empty() {
        return Err(Error::usage("lookback study needs lookbacks and seeds"));
    }
    let mut rows = Vec::with_capacity(lookbacks.len());
    for &lb in lookbacks {
        let mut cfg = base_cfg.clone();
        cfg.lookback = lb;
        cfg.pool_out_len = None;
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let out: TrainOutcome = pipeline::train(&cfg, frame, seed)?;
            let reports = evaluate_model(&out.model, frame, &[cfg.horizon], false)?;
            per_seed.push(reports[0].mse);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        rows.push(LookbackRow {
            lookback: lb,
            mse_per_seed: per_seed,
            mean_mse: mean,
        });
    }
    Ok(rows)
}
