//! Series normalization, frame-level wavelet denoising and supervised
//! windowing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::{denoise_vector, WaveletConfig};

/// Variance floor for constant variables; normalized values become zero
/// instead of blowing up.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Per-variable normalization statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Variables whose standard deviation hit [`SIGMA_FLOOR`].
    pub clamped: Vec<usize>,
}

/// A multivariate series: `T x N` values plus variable labels and, once
/// fitted, normalization statistics.
#[derive(Debug, Clone)]
pub struct SeriesFrame {
    pub values: Tensor,
    pub var_names: Vec<String>,
    pub stats: Option<Stats>,
}

impl SeriesFrame {
    pub fn new(values: Tensor, var_names: Vec<String>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::dim("series values must be a T x N matrix"));
        }
        let (t, n) = (values.nrows(), values.ncols());
        if t < 2 || n < 1 {
            return Err(Error::config(format!(
                "series needs T >= 2 and N >= 1, got {t} x {n}"
            )));
        }
        if var_names.len() != n {
            return Err(Error::dim(format!(
                "{} variable names for {n} columns",
                var_names.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::numeric("series contains non-finite values"));
        }
        Ok(SeriesFrame {
            values,
            var_names,
            stats: None,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.num_rows()).map(|i| self.values.at2(i, j)).collect()
    }

    /// Compute per-variable mean and population standard deviation over the
    /// first `train_rows` rows, clamping degenerate variables to the floor.
    pub fn fit_stats(&mut self, train_rows: usize) -> Result<&Stats> {
        let (t, n) = (self.num_rows(), self.num_vars());
        if train_rows == 0 || train_rows > t {
            return Err(Error::usage(format!(
                "fit_stats train_rows {train_rows} out of range 1..={t}"
            )));
        }
        let mut mu = vec![0.0; n];
        let mut sigma = vec![0.0; n];
        let mut clamped = Vec::new();
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..train_rows {
                sum += self.values.at2(i, j);
            }
            let m = sum / train_rows as f64;
            let mut var = 0.0;
            for i in 0..train_rows {
                let d = self.values.at2(i, j) - m;
                var += d * d;
            }
            var /= train_rows as f64;
            let mut s = var.sqrt();
            if s < SIGMA_FLOOR {
                s = SIGMA_FLOOR;
                clamped.push(j);
            }
            mu[j] = m;
            sigma[j] = s;
        }
        self.stats = Some(Stats { mu, sigma, clamped });
        Ok(self.stats.as_ref().unwrap())
    }

    fn stats_or_usage(&self) -> Result<&Stats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::usage("normalization stats not fitted"))
    }

    /// `(x - mu) / sigma` per variable; statistics are retained for
    /// inversion.
    pub fn normalize(&self) -> Result<SeriesFrame> {
        let stats = self.stats_or_usage()?;
        let (t, n) = (self.num_rows(), self.num_vars());
        let mut out = Tensor::zeros(&[t, n]);
        for i in 0..t {
            for j in 0..n {
                out.set2(i, j, (self.values.at2(i, j) - stats.mu[j]) / stats.sigma[j]);
            }
        }
        Ok(SeriesFrame {
            values: out,
            var_names: self.var_names.clone(),
            stats: self.stats.clone(),
        })
    }

    /// Exact inverse of [`normalize`] up to float rounding.
    pub fn denormalize(&self) -> Result<SeriesFrame> {
        let stats = self.stats_or_usage()?;
        let (t, n) = (self.num_rows(), self.num_vars());
        let mut out = Tensor::zeros(&[t, n]);
        for i in 0..t {
            for j in 0..n {
                out.set2(i, j, self.values.at2(i, j) * stats.sigma[j] + stats.mu[j]);
            }
        }
        Ok(SeriesFrame {
            values: out,
            var_names: self.var_names.clone(),
            stats: self.stats.clone(),
        })
    }

    /// Contiguous row slice `[start, end)` carrying names and stats along.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesFrame {
        assert!(start < end && end <= self.num_rows(), "bad slice bounds");
        let n = self.num_vars();
        let data = self.values.data()[start * n..end * n].to_vec();
        SeriesFrame {
            values: Tensor::new(vec![end - start, n], data),
            var_names: self.var_names.clone(),
            stats: self.stats.clone(),
        }
    }
}

/// Denormalize a prediction matrix (rows x variables) with frame statistics.
pub fn denormalize_matrix(pred: &Tensor, stats: &Stats) -> Tensor {
    let (r, n) = (pred.nrows(), pred.ncols());
    assert_eq!(n, stats.mu.len(), "stat length mismatch");
    let mut out = Tensor::zeros(&[r, n]);
    for i in 0..r {
        for j in 0..n {
            out.set2(i, j, pred.at2(i, j) * stats.sigma[j] + stats.mu[j]);
        }
    }
    out
}

/// Wavelet-denoise every variable of a frame independently. Length and
/// variable count are preserved.
pub fn denoise(frame: &SeriesFrame, cfg: &WaveletConfig) -> Result<SeriesFrame> {
    let (t, n) = (frame.num_rows(), frame.num_vars());
    let columns: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| denoise_vector(&frame.column(j), cfg))
        .collect();
    let mut out = Tensor::zeros(&[t, n]);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        debug_assert_eq!(col.len(), t);
        for (i, v) in col.into_iter().enumerate() {
            out.set2(i, j, v);
        }
    }
    Ok(SeriesFrame {
        values: out,
        var_names: frame.var_names.clone(),
        stats: frame.stats.clone(),
    })
}

/// Denoise a single window matrix (`L x N`), each variable independently.
/// Used on model inputs so that forecasting never reads past the window.
pub fn denoise_window(window: &Tensor, cfg: &WaveletConfig) -> Result<Tensor> {
    let (l, n) = (window.nrows(), window.ncols());
    let mut out = Tensor::zeros(&[l, n]);
    for j in 0..n {
        let col: Vec<f64> = (0..l).map(|i| window.at2(i, j)).collect();
        let den = denoise_vector(&col, cfg)?;
        for (i, v) in den.into_iter().enumerate() {
            out.set2(i, j, v);
        }
    }
    Ok(out)
}

/// One supervised sample: an `L x N` input window and the `L_y x N` horizon
/// that immediately follows it.
#[derive(Debug, Clone)]
pub struct WindowPair {
    pub input: Tensor,
    pub target: Tensor,
    pub origin_index: usize,
}

/// Cut rolling windows: count = floor((T - L - L_y) / stride) + 1, ordered
/// by origin.
pub fn make_windows(
    frame: &SeriesFrame,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("lookback, horizon and stride must be >= 1"));
    }
    let t = frame.num_rows();
    let need = lookback + horizon;
    if t < need {
        return Err(Error::config(format!(
            "series length {t} shorter than lookback + horizon = {need}"
        )));
    }
    let n = frame.num_vars();
    let count = (t - need) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let o = w * stride;
        let input = frame.values.data()[o * n..(o + lookback) * n].to_vec();
        let target =
            frame.values.data()[(o + lookback) * n..(o + need) * n].to_vec();
        out.push(WindowPair {
            input: Tensor::new(vec![lookback, n], input),
            target: Tensor::new(vec![horizon, n], target),
            origin_index: o,
        });
    }
    Ok(out)
}
