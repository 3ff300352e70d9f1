//! Nonlinear feature adaptive extraction: branch maps stacked into a
//! scale x time x channel tensor, a gated deformable convolution over the
//! (scale, time) plane, channel mixing and a residual, reduced over the
//! scale axis to match the temporal map.
//!
//! The deformable kernel is depthwise (one weight per grid tap per channel);
//! cross-channel interaction happens in the mixing layer. A small standard
//! conv predicts one (dy, dx) offset pair per grid tap per location, another
//! predicts one gate logit per location broadcast over channels. Sampling is
//! bilinear over a zero-padded plane with coordinates clamped to the padded
//! rectangle, so arbitrarily large offsets stay finite.

use crate::autodiff::Engine;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameters of the gated deformable module, generic over the engine
/// handle.
#[derive(Debug, Clone)]
pub struct DeformParams<T> {
    /// Depthwise deformable kernel over the sampling grid, `[kh*kw, channels]`.
    pub def_kernel: T,
    /// Offset net conv weights, `[2*kh*kw, channels, kh, kw]`; zero-initialized
    /// so training starts at an exact standard convolution.
    pub offset_weight: T,
    /// Offset net bias, `[2*kh*kw]`.
    pub offset_bias: T,
    /// Gate net conv weights, `[1, channels, kh, kw]`.
    pub gate_weight: T,
    /// Gate net bias, `[1]`.
    pub gate_bias: T,
    /// Channel mixing map, `[channels, channels]`.
    pub mix_weights: T,
    /// Sampling grid extents (rows over scale, cols over time).
    pub grid: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct DeformConfig {
    pub channels: usize,
    pub grid: (usize, usize),
}

impl DeformConfig {
    pub fn with_defaults(channels: usize) -> Self {
        DeformConfig {
            channels,
            grid: (3, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.grid;
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(Error::config("deform grid extents must be odd and positive"));
        }
        if self.channels == 0 {
            return Err(Error::config("deform channels must be positive"));
        }
        Ok(())
    }
}

impl DeformParams<Tensor> {
    pub fn init(cfg: &DeformConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        let (kh, kw) = cfg.grid;
        let taps = kh * kw;
        let c = cfg.channels;
        let mut kr = rng.split("deform.kernel");
        let bound = 1.0 / (taps as f64).sqrt();
        let def_kernel = Tensor::uniform(&[taps, c], bound, &mut kr);
        let mut gr = rng.split("deform.gate");
        let gate_bound = 1.0 / ((c * taps) as f64).sqrt();
        let gate_weight = Tensor::uniform(&[1, c, kh, kw], gate_bound, &mut gr);
        let mut mr = rng.split("deform.mix");
        let mix_bound = 1.0 / (c as f64).sqrt();
        let mix_weights = Tensor::uniform(&[c, c], mix_bound, &mut mr);
        Ok(DeformParams {
            def_kernel,
            offset_weight: Tensor::zeros(&[2 * taps, c, kh, kw]),
            offset_bias: Tensor::zeros(&[2 * taps]),
            gate_weight,
            gate_bias: Tensor::zeros(&[1]),
            mix_weights,
            grid: cfg.grid,
        })
    }

    pub fn lift<E: Engine>(
        &self,
        engine: &mut E,
        mut lift_one: impl FnMut(&mut E, &Tensor) -> E::T,
    ) -> DeformParams<E::T> {
        DeformParams {
            def_kernel: lift_one(engine, &self.def_kernel),
            offset_weight: lift_one(engine, &self.offset_weight),
            offset_bias: lift_one(engine, &self.offset_bias),
            gate_weight: lift_one(engine, &self.gate_weight),
            gate_bias: lift_one(engine, &self.gate_bias),
            mix_weights: lift_one(engine, &self.mix_weights),
            grid: self.grid,
        }
    }

    pub fn param_count(&self) -> usize {
        self.def_kernel.len()
            + self.offset_weight.len()
            + self.offset_bias.len()
            + self.gate_weight.len()
            + self.gate_bias.len()
            + self.mix_weights.len()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.def_kernel,
            &self.offset_weight,
            &self.offset_bias,
            &self.gate_weight,
            &self.gate_bias,
            &self.mix_weights,
        ]
    }
}

/// Branch maps stacked scale-major into `[branches, time, channels]`.
/// Slice `s` of the result is bitwise branch `s`.
pub fn stack_branches<E: Engine>(engine: &mut E, branches: &[E::T]) -> Result<E::T> {
    if branches.len() < 2 {
        return Err(Error::dim("stack needs at least 2 branch maps"));
    }
    let first = engine.value(&branches[0]);
    for b in branches {
        if engine.value(b).shape() != first.shape() {
            return Err(Error::dim("branch maps disagree on shape"));
        }
    }
    Ok(engine.stack(branches))
}

/// Deformable convolution with offsets predicted from the input itself:
/// a standard conv produces one (d_scale, d_time) displacement per grid tap
/// per location, then each tap samples bilinearly at its displaced position.
pub fn deform_conv2d<E: Engine>(
    engine: &mut E,
    x_sd: &E::T,
    params: &DeformParams<E::T>,
) -> E::T {
    let offsets = engine.conv2d(x_sd, &params.offset_weight, &params.offset_bias);
    let (kh, kw) = params.grid;
    engine.deform_sample(x_sd, &offsets, &params.def_kernel, kh, kw)
}

/// Gate and apply: `X_dc = sigmoid(conv2d(X_sd)) .* DefConv(X_sd)`, the gate
/// computed per location and broadcast over channels.
pub fn gated_deform<E: Engine>(engine: &mut E, x_sd: &E::T, params: &DeformParams<E::T>) -> E::T {
    let logits = engine.conv2d(x_sd, &params.gate_weight, &params.gate_bias);
    let gate = engine.sigmoid(&logits);
    let def = deform_conv2d(engine, x_sd, params);
    engine.mul_gate(&def, &gate)
}

/// Full nonlinear path: stack, gated deformable conv, channel mixing,
/// residual against the stack, then mean over the scale axis down to
/// `[time, channels]`.
pub fn nfae_forward<E: Engine>(
    engine: &mut E,
    branches: &[E::T],
    params: &DeformParams<E::T>,
) -> Result<E::T> {
    let x_sd = stack_branches(engine, branches)?;
    let x_dc = gated_deform(engine, &x_sd, params);
    let shape = engine.value(&x_sd).shape().to_vec();
    let (s, l, c) = (shape[0], shape[1], shape[2]);
    let flat = engine.reshape(&x_dc, &[s * l, c]);
    let mixed = engine.matmul(&flat, &params.mix_weights);
    let x_fm = engine.reshape(&mixed, &[s, l, c]);
    let x_s = engine.add(&x_sd, &x_fm);
    Ok(engine.mean_scale(&x_s))
}
