//! Single-hidden-layer feedforward readout. Hidden weights and biases are
//! drawn once from the seeded stream and frozen; the output weights are the
//! ridge least-squares solution over the design matrix, computed in closed
//! form through the SVD pseudo-inverse. No iterative training.

use crate::error::{Error, Result};
use crate::kernels::sigmoid_scalar;
use crate::linalg::lstsq;
use crate::rng::Rng;
use crate::tensor::{matmul_unchecked, Tensor};

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Hidden width rule: 256 capped at four times the feature dimension.
pub fn default_hidden_width(feature_dim: usize) -> usize {
    256.min(4 * feature_dim).max(1)
}

/// Readout parameters. `omega` and `b` never change after [`init`];
/// only `beta` is (re)fitted.
#[derive(Debug, Clone)]
pub struct ReadoutParams {
    /// Frozen hidden weights, `[hidden, feature_dim]`.
    pub omega: Tensor,
    /// Frozen hidden biases, `[hidden]`.
    pub b: Tensor,
    /// Output weights, `[hidden, out_dim]`; `None` until fitted.
    pub beta: Option<Tensor>,
    pub ridge: f64,
}

impl ReadoutParams {
    /// Draw omega uniform in (-1/sqrt(d), +1/sqrt(d)) and b uniform in
    /// (-1, 1) from the seeded stream. The 1/sqrt(d) factor keeps the
    /// pre-activations O(1) at any feature width; unscaled draws saturate
    /// the sigmoid once d reaches the hundreds and the fit degrades into
    /// seed-dependent noise.
    pub fn init(feature_dim: usize, hidden: usize, ridge: f64, rng: &Rng) -> Result<Self> {
        if feature_dim == 0 || hidden == 0 {
            return Err(Error::config("readout dims must be positive"));
        }
        if ridge < 0.0 {
            return Err(Error::config("ridge must be non-negative"));
        }
        let mut wr = rng.split("readout.omega");
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let omega = Tensor::uniform(&[hidden, feature_dim], bound, &mut wr);
        let mut br = rng.split("readout.bias");
        let b = Tensor::uniform(&[hidden], 1.0, &mut br);
        Ok(ReadoutParams {
            omega,
            b,
            beta: None,
            ridge,
        })
    }

    pub fn hidden_width(&self) -> usize {
        self.omega.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.omega.len() + self.b.len() + self.beta.as_ref().map_or(0, Tensor::len)
    }

    /// Hidden activation of one feature vector: `sigmoid(omega g + b)`,
    /// elementwise strictly inside (0, 1).
    pub fn hidden(&self, g_flat: &[f64]) -> Result<Vec<f64>> {
        if g_flat.len() != self.feature_dim() {
            return Err(Error::dim(format!(
                "feature length {} does not match readout input {}",
                g_flat.len(),
                self.feature_dim()
            )));
        }
        let h = self.hidden_width();
        let d = self.feature_dim();
        let mut out = Vec::with_capacity(h);
        for i in 0..h {
            let row = &self.omega.data()[i * d..(i + 1) * d];
            let mut acc = self.b.data()[i];
            for (w, x) in row.iter().zip(g_flat) {
                acc += w * x;
            }
            out.push(sigmoid_scalar(acc));
        }
        Ok(out)
    }

    /// Hidden activations for a batch of feature rows: `[m, d] -> [m, hidden]`.
    pub fn hidden_batch(&self, g_rows: &Tensor) -> Result<Tensor> {
        if g_rows.ncols() != self.feature_dim() {
            return Err(Error::dim(format!(
                "feature width {} does not match readout input {}",
                g_rows.ncols(),
                self.feature_dim()
            )));
        }
        let mut z = matmul_unchecked(g_rows, &self.omega.transposed());
        let h = self.hidden_width();
        for i in 0..z.nrows() {
            for j in 0..h {
                let v = sigmoid_scalar(z.at2(i, j) + self.b.data()[j]);
                z.set2(i, j, v);
            }
        }
        Ok(z)
    }

    /// Closed-form fit of the output weights on a design matrix.
    pub fn fit_beta(&mut self, design: &DesignMatrix) -> Result<()> {
        if design.h.nrows() != design.y.nrows() {
            return Err(Error::dim("design rows and target rows differ"));
        }
        let beta = lstsq(&design.h, &design.y, self.ridge)?;
        if !beta.is_finite() {
            return Err(Error::numeric("readout fit produced non-finite weights"));
        }
        self.beta = Some(beta);
        Ok(())
    }

    /// Forecast one window: hidden activation times beta, reshaped to
    /// `[horizon, n_vars]` by the caller's dims. Normalized units.
    pub fn predict(&self, g_flat: &[f64], horizon: usize, n_vars: usize) -> Result<Tensor> {
        let beta = self
            .beta
            .as_ref()
            .ok_or_else(|| Error::usage("readout beta not fitted"))?;
        if beta.ncols() != horizon * n_vars {
            return Err(Error::dim(format!(
                "beta output width {} does not match horizon {horizon} x vars {n_vars}",
                beta.ncols()
            )));
        }
        let h = self.hidden(g_flat)?;
        let hm = Tensor::new(vec![1, h.len()], h);
        let y = matmul_unchecked(&hm, beta);
        Ok(y.reshaped(&[horizon, n_vars]))
    }
}

/// Design matrix for the closed-form fit: one row per training window.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// Hidden activations, `[windows, hidden]`.
    pub h: Tensor,
    /// Flattened targets, `[windows, horizon * n_vars]`.
    pub y: Tensor,
}

impl DesignMatrix {
    pub fn from_rows(h_rows: Vec<Vec<f64>>, y_rows: Vec<Vec<f64>>) -> Result<Self> {
        if h_rows.is_empty() || h_rows.len() != y_rows.len() {
            return Err(Error::dim("design matrix needs matching non-empty row sets"));
        }
        Ok(DesignMatrix {
            h: Tensor::from_rows(&h_rows),
            y: Tensor::from_rows(&y_rows),
        })
    }

    /// Mean squared error of `h beta` against the stored targets.
    pub fn mse_of(&self, beta: &Tensor) -> f64 {
        let pred = matmul_unchecked(&self.h, beta);
        let diff = pred.sub(&self.y);
        diff.data().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
    }
}
