//! Temporal feature extraction: shared-weight dilated 1D convolutions at
//! several rates, per-timestep layer normalization with ReLU, and an
//! adaptive-average-pool branch upsampled back to full length. Branch
//! outputs are summed position-wise into the cross-scale map `X_c`.

use crate::autodiff::Engine;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Variance epsilon inside the per-timestep normalization. Small enough that
/// the pre-affine output has unit variance to well below 1e-6.
pub const LN_EPS: f64 = 1e-12;

/// Parameters of the temporal module, generic over the engine handle so the
/// same forward code runs eagerly and on the gradient tape.
///
/// One `kernel` serves every dilation branch; the branch count never adds
/// parameters.
#[derive(Debug, Clone)]
pub struct TemporalParams<T> {
    /// Shared dilated-conv kernel, `[channels, n_vars, k]`.
    pub kernel: T,
    /// Shared conv bias, `[channels]`.
    pub bias: T,
    /// Layer-norm affine scale, `[channels]`.
    pub ln_scale: T,
    /// Layer-norm affine shift, `[channels]`.
    pub ln_shift: T,
    /// Post-pool conv kernel, `[channels, n_vars, k_pool]`.
    pub pool_kernel: T,
    pub dilations: Vec<usize>,
    pub pool_out_len: usize,
}

/// Hyperparameters used at initialization time.
#[derive(Debug, Clone)]
pub struct TemporalConfig {
    pub n_vars: usize,
    pub lookback: usize,
    pub channels: usize,
    pub kernel_len: usize,
    pub pool_kernel_len: usize,
    pub dilations: Vec<usize>,
    pub pool_out_len: usize,
}

impl TemporalConfig {
    pub fn with_defaults(n_vars: usize, lookback: usize, channels: usize) -> Self {
        TemporalConfig {
            n_vars,
            lookback,
            channels,
            kernel_len: 3,
            pool_kernel_len: 3,
            dilations: vec![1, 2, 5],
            pool_out_len: lookback.div_ceil(4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_len % 2 == 0 || self.pool_kernel_len % 2 == 0 {
            return Err(Error::config("conv kernel lengths must be odd"));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::config("dilations must be a non-empty list of positive rates"));
        }
        if self.pool_out_len < 1 || self.pool_out_len > self.lookback {
            return Err(Error::config(format!(
                "pool_out_len {} out of range 1..={}",
                self.pool_out_len, self.lookback
            )));
        }
        if self.channels == 0 || self.n_vars == 0 {
            return Err(Error::config("channels and n_vars must be positive"));
        }
        Ok(())
    }

    /// Number of branch maps produced: one per dilation plus the pool branch.
    pub fn branch_count(&self) -> usize {
        self.dilations.len() + 1
    }
}

impl TemporalParams<Tensor> {
    /// Seeded init: conv weights uniform in +-1/sqrt(n_vars * k), layer norm
    /// at identity.
    pub fn init(cfg: &TemporalConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        let mut wr = rng.split("tfe.kernel");
        let bound = 1.0 / ((cfg.n_vars * cfg.kernel_len) as f64).sqrt();
        let kernel = Tensor::uniform(&[cfg.channels, cfg.n_vars, cfg.kernel_len], bound, &mut wr);
        let mut br = rng.split("tfe.bias");
        let bias = Tensor::uniform(&[cfg.channels], bound, &mut br);
        let mut pr = rng.split("tfe.pool_kernel");
        let pool_bound = 1.0 / ((cfg.n_vars * cfg.pool_kernel_len) as f64).sqrt();
        let pool_kernel = Tensor::uniform(
            &[cfg.channels, cfg.n_vars, cfg.pool_kernel_len],
            pool_bound,
            &mut pr,
        );
        Ok(TemporalParams {
            kernel,
            bias,
            ln_scale: Tensor::full(&[cfg.channels], 1.0),
            ln_shift: Tensor::zeros(&[cfg.channels]),
            pool_kernel,
            dilations: cfg.dilations.clone(),
            pool_out_len: cfg.pool_out_len,
        })
    }

    /// Lift concrete parameters into an engine, through `lift_one` (constant
    /// for evaluation, leaf for training).
    pub fn lift<E: Engine>(
        &self,
        engine: &mut E,
        mut lift_one: impl FnMut(&mut E, &Tensor) -> E::T,
    ) -> TemporalParams<E::T> {
        TemporalParams {
            kernel: lift_one(engine, &self.kernel),
            bias: lift_one(engine, &self.bias),
            ln_scale: lift_one(engine, &self.ln_scale),
            ln_shift: lift_one(engine, &self.ln_shift),
            pool_kernel: lift_one(engine, &self.pool_kernel),
            dilations: self.dilations.clone(),
            pool_out_len: self.pool_out_len,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len()
            + self.bias.len()
            + self.ln_scale.len()
            + self.ln_shift.len()
            + self.pool_kernel.len()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.kernel,
            &self.bias,
            &self.ln_scale,
            &self.ln_shift,
            &self.pool_kernel,
        ]
    }
}

/// One dilated branch: `relu(LN(conv1d(x, d)))` with LN taken per timestep
/// over channels, affine scale/shift applied after standardization.
pub fn tfe_branch<E: Engine>(
    engine: &mut E,
    x: &E::T,
    params: &TemporalParams<E::T>,
    dilation: usize,
) -> E::T {
    let conv = engine.conv1d(x, &params.kernel, &params.bias, dilation);
    let normed = engine.row_standardize(&conv, LN_EPS);
    let scaled = engine.mul_row(&normed, &params.ln_scale);
    let shifted = engine.add_row(&scaled, &params.ln_shift);
    engine.relu(&shifted)
}

/// Pool branch: adaptive average pool to `pool_out_len` bins, conv, linear
/// upsample back to the input length.
pub fn pool_branch<E: Engine>(engine: &mut E, x: &E::T, params: &TemporalParams<E::T>) -> E::T {
    let l = engine.value(x).nrows();
    let pooled = engine.avg_pool_rows(x, params.pool_out_len);
    let channels = engine.value(&params.bias).len();
    let zero_bias = engine.constant(Tensor::zeros(&[channels]));
    let conv = engine.conv1d(&pooled, &params.pool_kernel, &zero_bias, 1);
    engine.upsample_rows(&conv, l)
}

/// Full temporal forward: the fused cross-scale map `X_c` (elementwise sum
/// of all branches at identical positions) plus the un-fused branch list for
/// the stacking module downstream.
pub fn tfe_forward<E: Engine>(
    engine: &mut E,
    x: &E::T,
    params: &TemporalParams<E::T>,
) -> (E::T, Vec<E::T>) {
    let mut branches: Vec<E::T> = params
        .dilations
        .clone()
        .iter()
        .map(|&d| tfe_branch(engine, x, params, d))
        .collect();
    branches.push(pool_branch(engine, x, params));
    let mut fused = branches[0].clone();
    for b in &branches[1..] {
        fused = engine.add(&fused, b);
    }
    (fused, branches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{fd_max_rel_err, Eval, Tape};

    fn test_cfg() -> TemporalConfig {
        TemporalConfig::with_defaults(3, 12, 8)
    }

    fn seeded_params() -> TemporalParams<Tensor> {
        TemporalParams::init(&test_cfg(), &Rng::from_seed(100)).unwrap()
    }

    fn random_window(seed: u64) -> Tensor {
        let mut rng = Rng::from_seed(seed);
        Tensor::uniform(&[12, 3], 1.0, &mut rng)
    }

    fn run_forward(x: &Tensor, p: &TemporalParams<Tensor>) -> (Tensor, Vec<Tensor>) {
        let mut e = Eval;
        let xh = e.constant(x.clone());
        let ph = p.lift(&mut e, |e, t| e.constant(t.clone()));
        tfe_forward(&mut e, &xh, &ph)
    }

    #[test]
    fn branch_outputs_are_nonnegative() {
        let (_, branches) = run_forward(&random_window(1), &seeded_params());
        // dilated branches end in ReLU; the pool branch does not
        for b in &branches[..3] {
            assert!(b.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn output_length_preserved_for_every_dilation() {
        let p = seeded_params();
        let (xc, branches) = run_forward(&random_window(2), &p);
        assert_eq!(xc.shape(), &[12, 8]);
        assert_eq!(branches.len(), 4);
        for b in &branches {
            assert_eq!(b.shape(), &[12, 8]);
        }
    }

    #[test]
    fn fused_map_is_branch_sum() {
        let (xc, branches) = run_forward(&random_window(3), &seeded_params());
        let mut oracle = Tensor::zeros(&[12, 8]);
        for b in &branches {
            oracle = oracle.add(b);
        }
        assert!(xc.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn branch_order_does_not_change_fusion() {
        let (_, branches) = run_forward(&random_window(4), &seeded_params());
        let forward: Tensor = branches
            .iter()
            .skip(1)
            .fold(branches[0].clone(), |acc, b| acc.add(b));
        let reverse: Tensor = branches
            .iter()
            .rev()
            .skip(1)
            .fold(branches.last().unwrap().clone(), |acc, b| acc.add(b));
        assert!(forward.max_abs_diff(&reverse) < 1e-12);
    }

    #[test]
    fn zero_input_gives_pool_zero_and_shift_only_dilated() {
        let mut p = seeded_params();
        // zero bias and shift: everything collapses to zero
        p.bias = Tensor::zeros(&[8]);
        p.ln_shift = Tensor::zeros(&[8]);
        let x = Tensor::zeros(&[12, 3]);
        let (xc, _) = run_forward(&x, &p);
        assert!(xc.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pre_affine_ln_is_standardized() {
        let mut e = Eval;
        let p = seeded_params();
        let x = random_window(5);
        let xh = e.constant(x);
        let ph = p.lift(&mut e, |e, t| e.constant(t.clone()));
        let conv = e.conv1d(&xh, &ph.kernel, &ph.bias, 1);
        let normed = e.row_standardize(&conv, LN_EPS);
        for i in 0..normed.nrows() {
            let row = normed.row(i);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = seeded_params();
        let x = random_window(6);
        let (a, _) = run_forward(&x, &p);
        let (b, _) = run_forward(&x, &p);
        assert_eq!(a, b);
    }

    #[test]
    fn shared_kernel_feeds_every_branch() {
        let p = seeded_params();
        let x = random_window(7);
        let (_, base) = run_forward(&x, &p);
        let mut bumped = p.clone();
        bumped.kernel.data_mut()[0] += 0.37;
        let (_, moved) = run_forward(&x, &bumped);
        // every dilated branch responds to the single shared kernel
        for (i, (a, b)) in base.iter().zip(&moved).enumerate().take(3) {
            assert!(a.max_abs_diff(b) > 0.0, "branch {i} ignored the shared kernel");
        }
        // parameter count is independent of how many dilations run
        let mut more = test_cfg();
        more.dilations = vec![1, 2, 3, 4, 5, 6];
        let p_more = TemporalParams::init(&more, &Rng::from_seed(100)).unwrap();
        assert_eq!(p.param_count(), p_more.param_count());
    }

    #[test]
    fn pool_identity_when_out_len_is_input_len() {
        let mut cfg = test_cfg();
        cfg.pool_out_len = 12;
        let p = TemporalParams::init(&cfg, &Rng::from_seed(100)).unwrap();
        let x = random_window(8);
        let mut e = Eval;
        let xh = e.constant(x.clone());
        // with pool_out_len == L the pooling and upsampling are both identity,
        // so the branch equals a plain conv of the input
        let ph = p.lift(&mut e, |e, t| e.constant(t.clone()));
        let got = pool_branch(&mut e, &xh, &ph);
        let zero_bias = e.constant(Tensor::zeros(&[8]));
        let want = e.conv1d(&xh, &ph.pool_kernel, &zero_bias, 1);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn even_kernel_length_rejected() {
        let mut cfg = test_cfg();
        cfg.kernel_len = 2;
        assert!(matches!(
            TemporalParams::init(&cfg, &Rng::from_seed(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn all_params_pass_finite_difference_checks() {
        let cfg = TemporalConfig::with_defaults(2, 8, 4);
        let p = TemporalParams::init(&cfg, &Rng::from_seed(200)).unwrap();
        let mut rng = Rng::from_seed(201);
        let x = Tensor::uniform(&[8, 2], 1.0, &mut rng);
        let inputs = vec![
            x,
            p.kernel.clone(),
            p.bias.clone(),
            p.ln_scale.clone(),
            p.ln_shift.clone(),
            p.pool_kernel.clone(),
        ];
        let dil = cfg.dilations.clone();
        let pool_out = cfg.pool_out_len;
        let err = fd_max_rel_err(&inputs, 1e-5, move |t: &mut Tape, vs| {
            let params = TemporalParams {
                kernel: vs[1],
                bias: vs[2],
                ln_scale: vs[3],
                ln_shift: vs[4],
                pool_kernel: vs[5],
                dilations: dil.clone(),
                pool_out_len: pool_out,
            };
            let (xc, _) = tfe_forward(t, &vs[0], &params);
            let sq = t.mul(&xc, &xc);
            t.sum_all(&sq)
        });
        assert!(err < 1e-4, "rel err {err}");
    }
}
