//! Model assembly and the two training phases: a closed-form fit over the
//! training windows, then a monitored forecasting loop that refits the
//! output weights from a fixed-size sliding buffer whenever rolling MSE
//! degrades past the policy threshold.

use std::time::Instant;

use rayon::prelude::*;

use crate::autodiff::{Engine, Eval, Tape, Var};
use crate::config::{Ablation, Mode, PipelineConfig};
use crate::deform::{self, DeformConfig, DeformParams};
use crate::error::{Error, Result};
use crate::preprocess::{denoise_window, make_windows, SeriesFrame, Stats, WindowPair};
use crate::readout::{default_hidden_width, DesignMatrix, ReadoutParams};
use crate::rng::Rng;
use crate::temporal::{self, TemporalConfig, TemporalParams};
use crate::tensor::Tensor;

/// Everything learned or frozen: preprocessing statistics, feature
/// parameters (per ablation), the readout, the Phase II baseline and the
/// raw training buffer the dynamic loop refits from.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub cfg: PipelineConfig,
    pub seed: u64,
    pub var_names: Vec<String>,
    pub stats: Stats,
    pub temporal: Option<TemporalParams<Tensor>>,
    pub deform: Option<DeformParams<Tensor>>,
    pub readout: ReadoutParams,
    pub baseline_mse: f64,
    /// Raw (unnormalized) training rows, `[M, N]`; fixed size across updates.
    pub train_buffer: Tensor,
}

impl ModelState {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    /// Flattened feature dimension entering the readout.
    pub fn feature_dim(&self) -> usize {
        feature_dim(&self.cfg, self.n_vars())
    }

    pub fn param_count(&self) -> usize {
        self.temporal.as_ref().map_or(0, TemporalParams::param_count)
            + self.deform.as_ref().map_or(0, DeformParams::param_count)
            + self.readout.param_count()
    }

    /// Feature map for one normalized window, flattened row-major.
    pub fn feature_vector(&self, window: &Tensor) -> Result<Vec<f64>> {
        let (l, n) = (self.cfg.lookback, self.n_vars());
        if window.shape() != [l, n] {
            return Err(Error::usage(format!(
                "window shape {:?} does not match configured {l} x {n}",
                window.shape()
            )));
        }
        let x = if self.cfg.denoise {
            denoise_window(window, &self.cfg.wavelet)?
        } else {
            window.clone()
        };
        let mut e = Eval;
        let xh = e.constant(x);
        let tp = self
            .temporal
            .as_ref()
            .map(|p| p.lift(&mut e, |e, t| e.constant(t.clone())));
        let dp = self
            .deform
            .as_ref()
            .map(|p| p.lift(&mut e, |e, t| e.constant(t.clone())));
        let g = features(
            &mut e,
            &xh,
            tp.as_ref(),
            dp.as_ref(),
            self.cfg.ablation,
            self.cfg.channels,
        )?;
        Ok(g.into_data())
    }

    /// Forecast one normalized window; output is `[horizon, n_vars]` in
    /// normalized units.
    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        let g = self.feature_vector(window)?;
        self.readout.predict(&g, self.cfg.horizon, self.n_vars())
    }

    /// Normalize a raw row matrix with the model statistics.
    pub fn normalize_rows(&self, raw: &Tensor) -> Tensor {
        let (t, n) = (raw.nrows(), raw.ncols());
        let mut out = Tensor::zeros(&[t, n]);
        for i in 0..t {
            for j in 0..n {
                out.set2(i, j, (raw.at2(i, j) - self.stats.mu[j]) / self.stats.sigma[j]);
            }
        }
        out
    }

    /// Rebuild the design matrix from the current buffer and refit the
    /// output weights. Feature parameters are untouched. Returns the
    /// training MSE on the buffer windows.
    pub fn refit_from_buffer(&mut self) -> Result<f64> {
        let normalized = self.normalize_rows(&self.train_buffer);
        let frame = SeriesFrame {
            values: normalized,
            var_names: self.var_names.clone(),
            stats: Some(self.stats.clone()),
        };
        let windows = make_windows(&frame, self.cfg.lookback, self.cfg.horizon, self.cfg.stride)?;
        let design = build_design(self, &windows)?;
        self.readout.fit_beta(&design)?;
        Ok(design.mse_of(self.readout.beta.as_ref().unwrap()))
    }
}

/// Flattened feature dimension for a configuration.
pub fn feature_dim(cfg: &PipelineConfig, n_vars: usize) -> usize {
    match cfg.ablation {
        Ablation::NoAll => cfg.lookback * n_vars,
        _ => cfg.lookback * cfg.channels,
    }
}

/// Identity-style channel projection `[n_vars, channels]` used by the
/// no-temporal ablation to feed the raw window into the deformable path.
fn identity_projection(n_vars: usize, channels: usize) -> Tensor {
    let mut p = Tensor::zeros(&[n_vars, channels]);
    for j in 0..n_vars.min(channels) {
        p.set2(j, j, 1.0);
    }
    p
}

/// Feature composition shared by eager prediction and taped training:
/// temporal map plus scale-reduced nonlinear map, per ablation.
pub fn features<E: Engine>(
    engine: &mut E,
    x: &E::T,
    temporal: Option<&TemporalParams<E::T>>,
    deform_p: Option<&DeformParams<E::T>>,
    ablation: Ablation,
    channels: usize,
) -> Result<E::T> {
    match ablation {
        Ablation::Full => {
            let tp = temporal.ok_or_else(|| Error::usage("full ablation needs temporal params"))?;
            let dp = deform_p.ok_or_else(|| Error::usage("full ablation needs deform params"))?;
            let (xc, branches) = temporal::tfe_forward(engine, x, tp);
            let xs = deform::nfae_forward(engine, &branches, dp)?;
            Ok(engine.add(&xc, &xs))
        }
        Ablation::NoGdc => {
            let tp = temporal.ok_or_else(|| Error::usage("no_gdc ablation needs temporal params"))?;
            let (xc, branches) = temporal::tfe_forward(engine, x, tp);
            let stacked = deform::stack_branches(engine, &branches)?;
            let xs = engine.mean_scale(&stacked);
            Ok(engine.add(&xc, &xs))
        }
        Ablation::NoTemporal => {
            let dp =
                deform_p.ok_or_else(|| Error::usage("no_temporal ablation needs deform params"))?;
            let n_vars = engine.value(x).ncols();
            let proj = engine.constant(identity_projection(n_vars, channels));
            let projected = engine.matmul(x, &proj);
            let branches = vec![projected.clone(), projected];
            deform::nfae_forward(engine, &branches, dp)
        }
        Ablation::NoAll => Ok(x.clone()),
    }
}

type InitParams = (
    Option<TemporalParams<Tensor>>,
    Option<DeformParams<Tensor>>,
    ReadoutParams,
);

fn init_params(cfg: &PipelineConfig, n_vars: usize, seed: u64) -> Result<InitParams> {
    let rng = Rng::from_seed(seed);
    let temporal = if cfg.ablation.uses_temporal() {
        let tc = TemporalConfig {
            n_vars,
            lookback: cfg.lookback,
            channels: cfg.channels,
            kernel_len: cfg.kernel_len,
            pool_kernel_len: cfg.pool_kernel_len,
            dilations: cfg.dilations.clone(),
            pool_out_len: cfg.resolved_pool_out_len(),
        };
        Some(TemporalParams::init(&tc, &rng)?)
    } else {
        None
    };
    let deform_p = if cfg.ablation.uses_deform() {
        let dc = DeformConfig {
            channels: cfg.channels,
            grid: cfg.grid,
        };
        Some(DeformParams::init(&dc, &rng)?)
    } else {
        None
    };
    let d = feature_dim(cfg, n_vars);
    let hidden = cfg.hidden.unwrap_or_else(|| default_hidden_width(d));
    let readout = ReadoutParams::init(d, hidden, cfg.ridge, &rng)?;
    Ok((temporal, deform_p, readout))
}

/// Hidden activations and flattened targets for a window set, rows in window
/// order. Window feature maps are independent, so they run in parallel.
pub fn build_design(model: &ModelState, windows: &[WindowPair]) -> Result<DesignMatrix> {
    if windows.is_empty() {
        return Err(Error::config("no training windows"));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = windows
        .par_iter()
        .map(|w| -> Result<(Vec<f64>, Vec<f64>)> {
            let g = model.feature_vector(&w.input)?;
            let h = model.readout.hidden(&g)?;
            Ok((h, w.target.data().to_vec()))
        })
        .collect::<Result<_>>()?;
    let (h_rows, y_rows): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    DesignMatrix::from_rows(h_rows, y_rows)
}

/// Result of Phase I training.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub train_windows: usize,
    pub train_mse: f64,
    pub baseline_mse: f64,
    /// Full-batch loss per epoch in gradient mode; empty otherwise.
    pub epoch_losses: Vec<f64>,
    pub elapsed_s: f64,
}

/// Phase I: fit statistics on the training slice, initialize parameters
/// from the seed, optionally pre-train feature parameters by gradient
/// descent, then solve the readout in closed form and measure the
/// validation baseline for Phase II.
pub fn train(cfg: &PipelineConfig, frame_raw: &SeriesFrame, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let t = frame_raw.num_rows();
    let split = cfg.split.apply(t);
    let need = cfg.lookback + cfg.horizon;
    if split.train < need {
        return Err(Error::config(format!(
            "insufficient data: {} training rows for lookback {} + horizon {}",
            split.train, cfg.lookback, cfg.horizon
        )));
    }

    let mut frame = frame_raw.clone();
    frame.fit_stats(split.train)?;
    let normalized = frame.normalize()?;
    let stats = frame.stats.clone().unwrap();

    let (mut temporal, mut deform_p, readout) = init_params(cfg, frame.num_vars(), seed)?;

    let train_frame = normalized.slice_rows(0, split.train);
    let windows = make_windows(&train_frame, cfg.lookback, cfg.horizon, cfg.stride)?;

    let mut epoch_losses = Vec::new();
    if cfg.mode == Mode::Gradient && cfg.ablation != Ablation::NoAll {
        epoch_losses = gradient_pretrain(cfg, &mut temporal, &mut deform_p, &windows, seed)?;
    }

    let mut model = ModelState {
        cfg: cfg.clone(),
        seed,
        var_names: frame.var_names.clone(),
        stats,
        temporal,
        deform: deform_p,
        readout,
        baseline_mse: 0.0,
        train_buffer: frame_raw.slice_rows(0, split.train).values,
    };

    let design = build_design(&model, &windows)?;
    model.readout.fit_beta(&design)?;
    let train_mse = design.mse_of(model.readout.beta.as_ref().unwrap());

    // Phase II reference point: MSE on the held-out validation tail; falls
    // back to the training MSE when the tail is too short to window.
    let val_end = split.train + split.val;
    model.baseline_mse = if split.val >= need {
        let val_frame = normalized.slice_rows(split.train, val_end);
        let val_windows = make_windows(&val_frame, cfg.lookback, cfg.horizon, cfg.stride)?;
        let errs: Vec<f64> = val_windows
            .par_iter()
            .map(|w| -> Result<f64> {
                let pred = model.forward(&w.input)?;
                Ok(window_mse(&pred, &w.target))
            })
            .collect::<Result<Vec<f64>>>()?;
        errs.iter().sum::<f64>() / errs.len() as f64
    } else {
        train_mse
    };

    Ok(TrainOutcome {
        train_windows: windows.len(),
        train_mse,
        baseline_mse: model.baseline_mse,
        epoch_losses,
        elapsed_s: started.elapsed().as_secs_f64(),
        model,
    })
}

pub fn window_mse(pred: &Tensor, truth: &Tensor) -> f64 {
    let d = pred.sub(truth);
    d.data().iter().map(|v| v * v).sum::<f64>() / d.len() as f64
}

struct LiftedParams {
    temporal: Option<TemporalParams<Var>>,
    deform: Option<DeformParams<Var>>,
    head: Var,
}

fn lift_leaves(
    tape: &mut Tape,
    temporal: &Option<TemporalParams<Tensor>>,
    deform_p: &Option<DeformParams<Tensor>>,
    head: &Tensor,
) -> LiftedParams {
    LiftedParams {
        temporal: temporal.as_ref().map(|p| p.lift(tape, |t, x| t.leaf(x.clone()))),
        deform: deform_p.as_ref().map(|p| p.lift(tape, |t, x| t.leaf(x.clone()))),
        head: tape.leaf(head.clone()),
    }
}

/// Full-batch gradient descent on the feature parameters with a temporary
/// linear head. Returns the loss per epoch, evaluated before each step.
fn gradient_pretrain(
    cfg: &PipelineConfig,
    temporal: &mut Option<TemporalParams<Tensor>>,
    deform_p: &mut Option<DeformParams<Tensor>>,
    windows: &[WindowPair],
    seed: u64,
) -> Result<Vec<f64>> {
    let n_vars = windows[0].input.ncols();
    let d_feat = feature_dim(cfg, n_vars);
    let q = cfg.horizon * n_vars;
    let mut head_rng = Rng::from_seed(seed).split("gradient.head");
    let mut head = Tensor::uniform(&[d_feat, q], 0.01, &mut head_rng);

    // denoising is preprocessing: constant through training
    let inputs: Vec<Tensor> = windows
        .iter()
        .map(|w| {
            if cfg.denoise {
                denoise_window(&w.input, &cfg.wavelet)
            } else {
                Ok(w.input.clone())
            }
        })
        .collect::<Result<_>>()?;

    let lr = cfg.learning_rate;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let lifted = lift_leaves(&mut tape, temporal, deform_p, &head);
        let mut total: Option<Var> = None;
        for (w, x) in windows.iter().zip(&inputs) {
            let xh = tape.constant(x.clone());
            let g = features(
                &mut tape,
                &xh,
                lifted.temporal.as_ref(),
                lifted.deform.as_ref(),
                cfg.ablation,
                cfg.channels,
            )?;
            let gf = tape.reshape(&g, &[1, d_feat]);
            let pred = tape.matmul(&gf, &lifted.head);
            let target = tape.constant(w.target.reshaped(&[1, q]));
            let diff = tape.sub(&pred, &target);
            let sq = tape.mul(&diff, &diff);
            let s = tape.sum_all(&sq);
            total = Some(match total {
                Some(acc) => tape.add(&acc, &s),
                None => s,
            });
        }
        let loss = tape.scale(&total.unwrap(), 1.0 / (windows.len() * q) as f64);
        losses.push(tape.get(loss).data()[0]);
        let grads = tape.backward(loss)?;

        let step = |var: Var, value: &mut Tensor| {
            let g = grads.get(&tape, var);
            *value = value.sub(&g.scale(lr));
        };
        if let (Some(h), Some(p)) = (&lifted.temporal, temporal.as_mut()) {
            step(h.kernel, &mut p.kernel);
            step(h.bias, &mut p.bias);
            step(h.ln_scale, &mut p.ln_scale);
            step(h.ln_shift, &mut p.ln_shift);
            step(h.pool_kernel, &mut p.pool_kernel);
        }
        if let (Some(h), Some(p)) = (&lifted.deform, deform_p.as_mut()) {
            step(h.def_kernel, &mut p.def_kernel);
            step(h.offset_weight, &mut p.offset_weight);
            step(h.offset_bias, &mut p.offset_bias);
            step(h.gate_weight, &mut p.gate_weight);
            step(h.gate_bias, &mut p.gate_bias);
            step(h.mix_weights, &mut p.mix_weights);
        }
        step(lifted.head, &mut head);
    }
    Ok(losses)
}

/// Monitoring policy for the dynamic loop.
#[derive(Debug, Clone)]
pub struct UpdatePolicy {
    /// Refit when chunk MSE exceeds `baseline_mse * (1 + degradation_frac)`.
    pub degradation_frac: f64,
    pub baseline_mse: f64,
    /// Fixed training-buffer size in rows.
    pub train_window_size: usize,
    /// Scored windows per monitoring chunk.
    pub eval_chunk: usize,
}

impl UpdatePolicy {
    pub fn from_model(model: &ModelState) -> Self {
        UpdatePolicy {
            degradation_frac: model.cfg.degradation_frac,
            baseline_mse: model.baseline_mse,
            train_window_size: model.train_buffer.nrows(),
            eval_chunk: model.cfg.eval_chunk,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.baseline_mse * (1.0 + self.degradation_frac)
    }
}

/// One readout refit triggered by degraded monitoring MSE.
#[derive(Debug, Clone)]
pub struct UpdateEvent {
    pub chunk_index: usize,
    /// Stream rows observed when the update fired.
    pub at_row: usize,
    /// Triggering chunk MSE under the old weights.
    pub pre_mse: f64,
    /// Same chunk re-evaluated under the refit weights.
    pub post_mse: f64,
}

/// Forecasts, per-window and per-chunk errors, and the update log of one
/// dynamic run.
#[derive(Debug)]
pub struct DynamicOutcome {
    /// (origin row, forecast) per scored window, normalized units.
    pub forecasts: Vec<(usize, Tensor)>,
    pub window_mse: Vec<f64>,
    pub chunk_mse: Vec<f64>,
    pub events: Vec<UpdateEvent>,
    pub final_buffer_rows: usize,
    /// Forecast from the last lookback rows (no truth available yet).
    pub final_forecast: Option<Tensor>,
    pub warning: Option<String>,
}

/// Phase II: forecast the stream window by window, score each chunk, and
/// refit the output weights from the fixed-size buffer when the chunk MSE
/// exceeds the policy threshold. Feature parameters and the hidden layer
/// never change; only beta is refit. Forecasting a window reads rows up to
/// its origin plus the lookback, never further.
pub fn dynamic_predict(
    model: &mut ModelState,
    stream_raw: &SeriesFrame,
    policy: &UpdatePolicy,
) -> Result<DynamicOutcome> {
    let (l, ly) = (model.cfg.lookback, model.cfg.horizon);
    let n = model.n_vars();
    if stream_raw.num_vars() != n {
        return Err(Error::dim(format!(
            "stream has {} variables, model expects {n}",
            stream_raw.num_vars()
        )));
    }
    let t = stream_raw.num_rows();
    let mut outcome = DynamicOutcome {
        forecasts: Vec::new(),
        window_mse: Vec::new(),
        chunk_mse: Vec::new(),
        events: Vec::new(),
        final_buffer_rows: model.train_buffer.nrows(),
        final_forecast: None,
        warning: None,
    };
    if t < l + ly {
        outcome.warning = Some(format!(
            "stream of {t} rows is shorter than one window ({} rows); nothing scored",
            l + ly
        ));
        return Ok(outcome);
    }

    let normalized = model.normalize_rows(&stream_raw.values);
    let m = policy.train_window_size;
    // stream rows already absorbed into the buffer
    let mut absorbed = 0usize;
    let mut chunk_windows: Vec<usize> = Vec::new(); // window origins of the open chunk
    let mut chunk_errs: Vec<f64> = Vec::new();

    let last_origin = t - l - ly;
    for origin in (0..=last_origin).step_by(model.cfg.stride) {
        let input = Tensor::new(
            vec![l, n],
            normalized.data()[origin * n..(origin + l) * n].to_vec(),
        );
        let truth = Tensor::new(
            vec![ly, n],
            normalized.data()[(origin + l) * n..(origin + l + ly) * n].to_vec(),
        );
        let pred = model.forward(&input)?;
        let err = window_mse(&pred, &truth);
        outcome.forecasts.push((origin, pred));
        outcome.window_mse.push(err);
        chunk_windows.push(origin);
        chunk_errs.push(err);

        if chunk_errs.len() == policy.eval_chunk {
            let chunk_mse = chunk_errs.iter().sum::<f64>() / chunk_errs.len() as f64;
            outcome.chunk_mse.push(chunk_mse);
            let chunk_index = outcome.chunk_mse.len() - 1;
            if chunk_mse > policy.threshold() {
                // absorb every observed stream row, evict oldest to keep M
                let observed_end = origin + l + ly;
                if observed_end > absorbed {
                    append_rows(
                        &mut model.train_buffer,
                        &stream_raw.values,
                        absorbed,
                        observed_end,
                        m,
                    );
                    absorbed = observed_end;
                }
                model.refit_from_buffer()?;
                debug_assert_eq!(model.train_buffer.nrows(), m);
                // re-score the triggering chunk under the new weights
                let mut post = 0.0;
                for &o in &chunk_windows {
                    let xin = Tensor::new(
                        vec![l, n],
                        normalized.data()[o * n..(o + l) * n].to_vec(),
                    );
                    let tr = Tensor::new(
                        vec![ly, n],
                        normalized.data()[(o + l) * n..(o + l + ly) * n].to_vec(),
                    );
                    post += window_mse(&model.forward(&xin)?, &tr);
                }
                post /= chunk_windows.len() as f64;
                outcome.events.push(UpdateEvent {
                    chunk_index,
                    at_row: origin + l + ly,
                    pre_mse: chunk_mse,
                    post_mse: post,
                });
            }
            chunk_windows.clear();
            chunk_errs.clear();
        }
    }

    // live forecast from the freshest lookback rows
    let tail = Tensor::new(vec![l, n], normalized.data()[(t - l) * n..].to_vec());
    outcome.final_forecast = Some(model.forward(&tail)?);
    outcome.final_buffer_rows = model.train_buffer.nrows();
    Ok(outcome)
}

/// Named intermediate feature maps for one normalized window, in forward
/// order. Includes the plain (zero-offset) convolution next to the gated
/// deformable output so the two can be compared side by side.
pub fn diagnostic_maps(model: &ModelState, window: &Tensor) -> Result<Vec<(String, Tensor)>> {
    let cfg = &model.cfg;
    let x = if cfg.denoise {
        denoise_window(window, &cfg.wavelet)?
    } else {
        window.clone()
    };
    let mut maps: Vec<(String, Tensor)> = vec![("input_denoised".into(), x.clone())];
    let mut e = Eval;
    let xh = e.constant(x);

    let branches: Option<Vec<Tensor>> = if cfg.ablation.uses_temporal() {
        let tp = model
            .temporal
            .as_ref()
            .unwrap()
            .lift(&mut e, |e, t| e.constant(t.clone()));
        let (xc, branches) = temporal::tfe_forward(&mut e, &xh, &tp);
        for (b, d) in branches.iter().zip(&tp.dilations) {
            maps.push((format!("branch_d{d}"), b.clone()));
        }
        maps.push(("branch_pool".into(), branches.last().unwrap().clone()));
        maps.push(("x_c".into(), xc));
        Some(branches)
    } else if cfg.ablation.uses_deform() {
        let n_vars = window.ncols();
        let proj = e.constant(identity_projection(n_vars, cfg.channels));
        let projected = e.matmul(&xh, &proj);
        Some(vec![projected.clone(), projected])
    } else {
        None
    };

    if cfg.ablation.uses_deform() {
        let dp = model
            .deform
            .as_ref()
            .unwrap()
            .lift(&mut e, |e, t| e.constant(t.clone()));
        let branches = branches.as_ref().unwrap();
        let x_sd = deform::stack_branches(&mut e, branches)?;
        let offsets = e.conv2d(&x_sd, &dp.offset_weight, &dp.offset_bias);
        maps.push(("offsets".into(), offsets.clone()));
        let logits = e.conv2d(&x_sd, &dp.gate_weight, &dp.gate_bias);
        let gate = e.sigmoid(&logits);
        maps.push(("gate".into(), gate.clone()));
        let (kh, kw) = dp.grid;
        let def = e.deform_sample(&x_sd, &offsets, &dp.def_kernel, kh, kw);
        maps.push(("conv_deformable".into(), def.clone()));
        let zero_off = e.constant(Tensor::zeros(offsets.shape()));
        let plain = e.deform_sample(&x_sd, &zero_off, &dp.def_kernel, kh, kw);
        maps.push(("conv_standard".into(), plain));
        let x_dc = e.mul_gate(&def, &gate);
        maps.push(("x_dc".into(), x_dc.clone()));
        let shape = x_sd.shape().to_vec();
        let (s, l, c) = (shape[0], shape[1], shape[2]);
        let flat = e.reshape(&x_dc, &[s * l, c]);
        let mixed = e.matmul(&flat, &dp.mix_weights);
        let x_fm = e.reshape(&mixed, &[s, l, c]);
        maps.push(("x_fm".into(), x_fm.clone()));
        let x_s = e.mean_scale(&x_sd.add(&x_fm));
        maps.push(("x_s".into(), x_s));
    } else if cfg.ablation == Ablation::NoGdc {
        let branches = branches.as_ref().unwrap();
        let stacked = deform::stack_branches(&mut e, branches)?;
        maps.push(("x_s".into(), e.mean_scale(&stacked)));
    }

    let tp = model
        .temporal
        .as_ref()
        .map(|p| p.lift(&mut e, |e, t| e.constant(t.clone())));
    let dp = model
        .deform
        .as_ref()
        .map(|p| p.lift(&mut e, |e, t| e.constant(t.clone())));
    let g = features(&mut e, &xh, tp.as_ref(), dp.as_ref(), cfg.ablation, cfg.channels)?;
    maps.push(("g".into(), g));
    Ok(maps)
}

/// Append stream rows `[from, to)` to the buffer and evict the oldest rows
/// so exactly `m` remain.
fn append_rows(buffer: &mut Tensor, stream: &Tensor, from: usize, to: usize, m: usize) {
    let n = buffer.ncols();
    let mut rows: Vec<f64> = buffer.data().to_vec();
    rows.extend_from_slice(&stream.data()[from * n..to * n]);
    let total = rows.len() / n;
    let keep_from = total.saturating_sub(m);
    let kept = rows[keep_from * n..].to_vec();
    *buffer = Tensor::new(vec![total - keep_from, n], kept);
}
