//! Orthogonal wavelet decomposition and soft/hard compromise threshold
//! denoising.
//!
//! Signals are symmetrically padded to the next multiple of `2^levels` and
//! transformed with a periodized filter bank, which gives exact
//! reconstruction for every length (including non powers of two). The
//! compromise threshold kills coefficients below `gamma` and shrinks the
//! survivors by `a * gamma`, so `a = 0` is hard thresholding and `a = 1` is
//! soft thresholding.

use crate::error::{Error, Result};

/// Supported orthogonal wavelet bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletFamily {
    Haar,
    Db2,
    Db4,
}

impl WaveletFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletFamily::Haar),
            "db2" => Ok(WaveletFamily::Db2),
            "db4" => Ok(WaveletFamily::Db4),
            other => Err(Error::config(format!(
                "unknown wavelet family '{other}' (expected haar, db2 or db4)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveletFamily::Haar => "haar",
            WaveletFamily::Db2 => "db2",
            WaveletFamily::Db4 => "db4",
        }
    }

    /// Low-pass (scaling) decomposition filter, normalized so the taps sum
    /// to sqrt(2).
    fn scaling_filter(self) -> &'static [f64] {
        const HAAR: [f64; 2] =
            [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
        const DB2: [f64; 4] = [
            0.48296291314453416,
            0.8365163037378079,
            0.2241438680420134,
            -0.12940952255126037,
        ];
        const DB4: [f64; 8] = [
            0.23037781330885523,
            0.7148465705525415,
            0.6308807679295904,
            -0.02798376941698385,
            -0.18703481171888114,
            0.030841381835986965,
            0.032883011666982945,
            -0.010597401784997278,
        ];
        match self {
            WaveletFamily::Haar => &HAAR,
            WaveletFamily::Db2 => &DB2,
            WaveletFamily::Db4 => &DB4,
        }
    }
}

/// High-pass filter from the low-pass via the alternating flip (QMF)
/// relation `g[n] = (-1)^n h[F-1-n]`.
fn wavelet_filter(h: &[f64]) -> Vec<f64> {
    let f = h.len();
    (0..f)
        .map(|n| {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sign * h[f - 1 - n]
        })
        .collect()
}

/// Threshold selection rule for [`denoise_vector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule {
    /// Universal (VisuShrink) threshold `sigma_hat * sqrt(2 ln T)` with the
    /// noise scale estimated from the finest detail level by
    /// `median(|d|) / 0.6745`.
    Universal,
    /// A caller-supplied fixed threshold.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct WaveletConfig {
    pub family: WaveletFamily,
    /// Decomposition depth; capped by the signal length at transform time.
    pub levels: usize,
    /// Compromise coefficient in [0, 1]: 0 = hard threshold, 1 = soft.
    pub a: f64,
    pub gamma_rule: GammaRule,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            family: WaveletFamily::Db4,
            levels: 3,
            a: 0.5,
            gamma_rule: GammaRule::Universal,
        }
    }
}

impl WaveletConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("wavelet levels must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::config(format!(
                "compromise coefficient a = {} outside [0, 1]",
                self.a
            )));
        }
        if let GammaRule::Fixed(g) = self.gamma_rule {
            if g < 0.0 || !g.is_finite() {
                return Err(Error::config("fixed gamma must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Multi-level coefficient pyramid. `details[0]` is the finest scale.
#[derive(Debug, Clone)]
pub struct CoeffPyramid {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    original_len: usize,
}

impl CoeffPyramid {
    pub fn original_len(&self) -> usize {
        self.original_len
    }
}

/// Half-sample symmetric extension index: ..., x1, x0 | x0, x1, ..., x_{n-1} | x_{n-1}, ...
#[inline]
fn sym_index(i: usize, n: usize) -> usize {
    let m = i % (2 * n);
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Effective depth for a signal of length `t`: the configured depth capped
/// by `floor(log2 t)`.
pub fn effective_levels(cfg_levels: usize, t: usize) -> usize {
    let mut cap = 0;
    while (1usize << (cap + 1)) <= t {
        cap += 1;
    }
    cfg_levels.min(cap)
}

/// One analysis step of the periodized filter bank on an even-length signal.
fn analysis_step(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    debug_assert!(n % 2 == 0);
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (j, (&hj, &gj)) in h.iter().zip(g).enumerate() {
            let v = x[(2 * k + j) % n];
            a += hj * v;
            d += gj * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
    (approx, detail)
}

/// One synthesis step: the adjoint of [`analysis_step`], exact inverse for
/// orthogonal filters.
fn synthesis_step(approx: &[f64], detail: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let half = approx.len();
    let n = half * 2;
    let mut x = vec![0.0; n];
    for k in 0..half {
        for (j, (&hj, &gj)) in h.iter().zip(g).enumerate() {
            let m = (2 * k + j) % n;
            x[m] += approx[k] * hj + detail[k] * gj;
        }
    }
    x
}

/// Multi-level discrete wavelet transform.
///
/// Requires `signal.len() >= 2^levels` after depth capping; shorter signals
/// are a configuration error.
pub fn dwt(signal: &[f64], cfg: &WaveletConfig) -> Result<CoeffPyramid> {
    cfg.validate()?;
    let t = signal.len();
    if t < (1usize << cfg.levels.min(30)) {
        return Err(Error::config(format!(
            "signal length {t} too short for {} wavelet levels",
            cfg.levels
        )));
    }
    let levels = cfg.levels;
    let block = 1usize << levels;
    let padded_len = t.div_ceil(block) * block;
    let mut current: Vec<f64> = (0..padded_len).map(|i| signal[sym_index(i, t)]).collect();

    let h = cfg.family.scaling_filter();
    let g = wavelet_filter(h);
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = analysis_step(&current, h, &g);
        details.push(d);
        current = a;
    }
    Ok(CoeffPyramid {
        approx: current,
        details,
        original_len: t,
    })
}

/// Inverse transform; returns a signal of the pyramid's original length.
pub fn idwt(pyr: &CoeffPyramid, cfg: &WaveletConfig) -> Vec<f64> {
    let h = cfg.family.scaling_filter();
    let g = wavelet_filter(h);
    let mut current = pyr.approx.clone();
    for d in pyr.details.iter().rev() {
        current = synthesis_step(&current, d, h, &g);
    }
    current.truncate(pyr.original_len);
    current
}

/// Soft/hard compromise shrinkage of a single coefficient:
/// `sgn(o) (|o| - a gamma)` when `|o| >= gamma`, else 0.
#[inline]
pub fn compromise_shrink(o: f64, gamma: f64, a: f64) -> f64 {
    if o.abs() >= gamma {
        o.signum() * (o.abs() - a * gamma)
    } else {
        0.0
    }
}

/// Apply the compromise threshold in place to a coefficient slice.
pub fn compromise_threshold(coeffs: &mut [f64], gamma: f64, a: f64) {
    for o in coeffs {
        *o = compromise_shrink(*o, gamma, a);
    }
}

/// Threshold chosen by the configured rule. For the universal rule `t_len`
/// is the original signal length.
pub fn select_gamma(pyr: &CoeffPyramid, t_len: usize, rule: GammaRule) -> f64 {
    match rule {
        GammaRule::Fixed(g) => g,
        GammaRule::Universal => {
            let finest = &pyr.details[0];
            let mut mags: Vec<f64> = finest.iter().map(|v| v.abs()).collect();
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = if mags.is_empty() {
                0.0
            } else if mags.len() % 2 == 1 {
                mags[mags.len() / 2]
            } else {
                0.5 * (mags[mags.len() / 2 - 1] + mags[mags.len() / 2])
            };
            let sigma_hat = median / 0.6745;
            sigma_hat * (2.0 * (t_len as f64).ln()).sqrt()
        }
    }
}

/// Full denoising chain for one variable: decompose, threshold every detail
/// level with one gamma, reconstruct. Output length equals input length.
pub fn denoise_vector(signal: &[f64], cfg: &WaveletConfig) -> Result<Vec<f64>> {
    let levels = effective_levels(cfg.levels, signal.len());
    if levels == 0 {
        return Err(Error::config(format!(
            "signal length {} too short for wavelet denoising",
            signal.len()
        )));
    }
    let eff = WaveletConfig {
        levels,
        ..cfg.clone()
    };
    let mut pyr = dwt(signal, &eff)?;
    let gamma = select_gamma(&pyr, signal.len(), eff.gamma_rule);
    for d in &mut pyr.details {
        compromise_threshold(d, gamma, eff.a);
    }
    Ok(idwt(&pyr, &eff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn cfg(family: WaveletFamily, levels: usize) -> WaveletConfig {
        WaveletConfig {
            family,
            levels,
            a: 0.5,
            gamma_rule: GammaRule::Universal,
        }
    }

    #[test]
    fn haar_two_sample_hand_case() {
        let pyr = dwt(&[1.0, 3.0], &cfg(WaveletFamily::Haar, 1)).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        assert!((pyr.approx[0] - 4.0 / s2).abs() < 1e-12);
        assert!((pyr.details[0][0] - (-2.0 / s2)).abs() < 1e-12);
    }

    #[test]
    fn constant_signal_has_vanishing_details() {
        for family in [WaveletFamily::Haar, WaveletFamily::Db2, WaveletFamily::Db4] {
            let x = vec![3.25; 64];
            let pyr = dwt(&x, &cfg(family, 3)).unwrap();
            for d in &pyr.details {
                for &v in d {
                    assert!(v.abs() < 1e-12, "{family:?}: detail {v}");
                }
            }
        }
    }

    #[test]
    fn round_trip_all_families_all_lengths() {
        let mut rng = Rng::from_seed(31);
        for family in [WaveletFamily::Haar, WaveletFamily::Db2, WaveletFamily::Db4] {
            for &len in &[32usize, 64, 128, 97] {
                let x: Vec<f64> = (0..len).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
                let c = cfg(family, 3);
                let pyr = dwt(&x, &c).unwrap();
                let back = idwt(&pyr, &c);
                assert_eq!(back.len(), len);
                let err = x
                    .iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-10, "{family:?} len {len}: round-trip err {err}");
            }
        }
    }

    #[test]
    fn too_short_signal_is_config_error() {
        let r = dwt(&[1.0, 2.0, 3.0], &cfg(WaveletFamily::Haar, 2));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn threshold_unit_cases() {
        assert_eq!(compromise_shrink(0.5, 1.0, 0.5), 0.0);
        assert!((compromise_shrink(2.0, 1.0, 0.5) - 1.5).abs() < 1e-15);
        assert!((compromise_shrink(-2.0, 1.0, 0.5) + 1.5).abs() < 1e-15);
        // a = 0 reproduces the hard threshold
        assert_eq!(compromise_shrink(2.0, 1.0, 0.0), 2.0);
        // a = 1 reproduces the soft threshold
        assert!((compromise_shrink(2.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gamma_denoise_is_identity() {
        let mut rng = Rng::from_seed(32);
        let x: Vec<f64> = (0..100).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let c = WaveletConfig {
            gamma_rule: GammaRule::Fixed(0.0),
            ..Default::default()
        };
        let y = denoise_vector(&x, &c).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn constant_signal_unchanged() {
        let x = vec![1.5; 77];
        let y = denoise_vector(&x, &WaveletConfig::default()).unwrap();
        for v in y {
            assert!((v - 1.5).abs() < 1e-10);
        }
    }

    #[test]
    fn denoising_reduces_mse_on_noisy_sine() {
        let mut rng = Rng::from_seed(33);
        let t = 256;
        let clean: Vec<f64> = (0..t)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 32.0).sin())
            .collect();
        let noisy: Vec<f64> = clean.iter().map(|&v| v + 0.3 * rng.normal()).collect();
        let den = denoise_vector(&noisy, &WaveletConfig::default()).unwrap();
        let mse = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
        };
        let before = mse(&noisy, &clean);
        let after = mse(&den, &clean);
        assert!(
            after < before,
            "denoising failed to help: before {before}, after {after}"
        );
    }

    #[test]
    fn denoise_preserves_length() {
        let mut rng = Rng::from_seed(34);
        for &len in &[16usize, 33, 97, 200] {
            let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
            let y = denoise_vector(&x, &WaveletConfig::default()).unwrap();
            assert_eq!(y.len(), len);
        }
    }

    proptest! {
        #[test]
        fn threshold_is_odd(o in -10.0f64..10.0, gamma in 0.01f64..5.0, a in 0.0f64..1.0) {
            let f = compromise_shrink(o, gamma, a);
            let fneg = compromise_shrink(-o, gamma, a);
            prop_assert!((f + fneg).abs() < 1e-12);
        }

        #[test]
        fn threshold_is_monotone(o1 in -10.0f64..10.0, delta in 0.0f64..5.0,
                                 gamma in 0.01f64..5.0, a in 0.0f64..1.0) {
            let lo = compromise_shrink(o1, gamma, a);
            let hi = compromise_shrink(o1 + delta, gamma, a);
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn round_trip_random_lengths(len in 8usize..160, seed in 0u64..1000) {
            let mut rng = Rng::from_seed(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let c = WaveletConfig { levels: effective_levels(3, len), ..Default::default() };
            let pyr = dwt(&x, &c).unwrap();
            let back = idwt(&pyr, &c);
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-10);
        }
    }
}
