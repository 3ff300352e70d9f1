//! Pipeline configuration: defaults, the line-based `key = value` config
//! file format, and a canonical echo used for manifests and the model
//! container. Unknown keys are errors rather than silent no-ops.

use crate::datasets::SplitSpec;
use crate::error::{Error, Result};
use crate::readout::DEFAULT_RIDGE;
use crate::wavelet::{GammaRule, WaveletConfig, WaveletFamily};

/// How the readout is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Feature parameters stay at their seeded initialization; only the
    /// output weights are solved in closed form.
    RandomFeature,
    /// Feature parameters are first tuned by full-batch gradient descent
    /// with a temporary linear head, then frozen before the closed-form fit.
    Gradient,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random_feature" => Ok(Mode::RandomFeature),
            "gradient" => Ok(Mode::Gradient),
            other => Err(Error::config(format!(
                "unknown mode '{other}' (expected random_feature or gradient)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::RandomFeature => "random_feature",
            Mode::Gradient => "gradient",
        }
    }
}

/// Which feature modules run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Skip the gated deformable path; the nonlinear map becomes the plain
    /// scale-mean of the stacked branches.
    NoGdc,
    /// Skip the temporal module; the raw window enters the deformable path
    /// through a fixed identity-style channel projection.
    NoTemporal,
    /// Skip both: the readout sees the flattened denoised window.
    NoAll,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_gdc" => Ok(Ablation::NoGdc),
            "no_temporal" => Ok(Ablation::NoTemporal),
            "no_all" => Ok(Ablation::NoAll),
            other => Err(Error::config(format!(
                "unknown ablation '{other}' (expected full, no_gdc, no_temporal or no_all)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGdc => "no_gdc",
            Ablation::NoTemporal => "no_temporal",
            Ablation::NoAll => "no_all",
        }
    }

    pub fn uses_temporal(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGdc)
    }

    pub fn uses_deform(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoTemporal)
    }
}

/// Full pipeline configuration. Every value is resolved (no environment
/// lookups at use time); `auto` fields resolve against the lookback and
/// variable count at model initialization.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub denoise: bool,
    pub mode: Mode,
    pub ablation: Ablation,
    pub split: SplitSpec,

    pub wavelet: WaveletConfig,

    pub channels: usize,
    pub kernel_len: usize,
    pub pool_kernel_len: usize,
    pub dilations: Vec<usize>,
    /// None = ceil(lookback / 4).
    pub pool_out_len: Option<usize>,

    pub grid: (usize, usize),

    /// None = min(256, 4 * feature_dim).
    pub hidden: Option<usize>,
    pub ridge: f64,

    pub degradation_frac: f64,
    pub eval_chunk: usize,

    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lookback: 96,
            horizon: 24,
            stride: 1,
            denoise: true,
            mode: Mode::RandomFeature,
            ablation: Ablation::Full,
            split: SplitSpec::default(),
            wavelet: WaveletConfig::default(),
            channels: 16,
            kernel_len: 3,
            pool_kernel_len: 3,
            dilations: vec![1, 2, 5],
            pool_out_len: None,
            grid: (3, 3),
            hidden: None,
            ridge: DEFAULT_RIDGE,
            degradation_frac: 0.05,
            eval_chunk: 24,
            epochs: 10,
            learning_rate: 1e-3,
        }
    }
}

impl PipelineConfig {
    pub fn resolved_pool_out_len(&self) -> usize {
        self.pool_out_len.unwrap_or(self.lookback.div_ceil(4))
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback < 2 {
            return Err(Error::config("lookback must be >= 2"));
        }
        if self.horizon < 1 || self.stride < 1 {
            return Err(Error::config("horizon and stride must be >= 1"));
        }
        if self.degradation_frac < 0.0 {
            return Err(Error::config("degradation_frac must be >= 0"));
        }
        if self.eval_chunk < 1 {
            return Err(Error::config("eval_chunk must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be > 0"));
        }
        self.wavelet.validate()?;
        Ok(())
    }

    /// Apply one `key = value` pair. Unknown keys are errors.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let uint = |v: &str, key: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::config(format!("{key}: '{v}' is not a positive integer")))
        };
        let real = |v: &str, key: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::config(format!("{key}: '{v}' is not a number")))
        };
        match key {
            "pipeline.lookback" => self.lookback = uint(value, key)?,
            "pipeline.horizon" => self.horizon = uint(value, key)?,
            "pipeline.stride" => self.stride = uint(value, key)?,
            "pipeline.denoise" => self.denoise = parse_on_off(value)?,
            "pipeline.mode" => self.mode = Mode::parse(value)?,
            "pipeline.ablation" => self.ablation = Ablation::parse(value)?,
            "data.split" => self.split = SplitSpec::parse(value)?,
            "wavelet.family" => self.wavelet.family = WaveletFamily::parse(value)?,
            "wavelet.levels" => self.wavelet.levels = uint(value, key)?,
            "wavelet.a" => self.wavelet.a = real(value, key)?,
            "wavelet.gamma" => {
                self.wavelet.gamma_rule = if value == "universal" {
                    GammaRule::Universal
                } else {
                    GammaRule::Fixed(real(value, key)?)
                }
            }
            "tfe.channels" => self.channels = uint(value, key)?,
            "tfe.kernel" => self.kernel_len = uint(value, key)?,
            "tfe.pool_kernel" => self.pool_kernel_len = uint(value, key)?,
            "tfe.dilations" => {
                self.dilations = value
                    .split(',')
                    .map(|p| uint(p.trim(), key))
                    .collect::<Result<_>>()?;
            }
            "tfe.pool_out_len" => {
                self.pool_out_len = if value == "auto" {
                    None
                } else {
                    Some(uint(value, key)?)
                }
            }
            "deform.grid" => {
                let (h, w) = value
                    .split_once('x')
                    .ok_or_else(|| Error::config(format!("{key}: expected KHxKW, got '{value}'")))?;
                self.grid = (uint(h.trim(), key)?, uint(w.trim(), key)?);
            }
            "readout.hidden" => {
                self.hidden = if value == "auto" {
                    None
                } else {
                    Some(uint(value, key)?)
                }
            }
            "readout.ridge" => self.ridge = real(value, key)?,
            "update.degradation_frac" => self.degradation_frac = real(value, key)?,
            "update.eval_chunk" => self.eval_chunk = uint(value, key)?,
            "train.epochs" => self.epochs = uint(value, key)?,
            "train.lr" => self.learning_rate = real(value, key)?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse config file text: `key = value` lines, `#` comments, blank
    /// lines ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("config line {}: expected 'key = value'", lineno + 1))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Deterministic echo of every key in a fixed order. Parsing the echo
    /// back reproduces the configuration exactly.
    pub fn to_canonical_string(&self) -> String {
        let dilations: Vec<String> = self.dilations.iter().map(|d| d.to_string()).collect();
        let gamma = match self.wavelet.gamma_rule {
            GammaRule::Universal => "universal".to_string(),
            GammaRule::Fixed(g) => format!("{g}"),
        };
        let pool = self
            .pool_out_len
            .map_or("auto".to_string(), |v| v.to_string());
        let hidden = self.hidden.map_or("auto".to_string(), |v| v.to_string());
        format!(
            "pipeline.lookback = {}\n\
             pipeline.horizon = {}\n\
             pipeline.stride = {}\n\
             pipeline.denoise = {}\n\
             pipeline.mode = {}\n\
             pipeline.ablation = {}\n\
             data.split = {}:{}:{}\n\
             wavelet.family = {}\n\
             wavelet.levels = {}\n\
             wavelet.a = {}\n\
             wavelet.gamma = {}\n\
             tfe.channels = {}\n\
             tfe.kernel = {}\n\
             tfe.pool_kernel = {}\n\
             tfe.dilations = {}\n\
             tfe.pool_out_len = {}\n\
             deform.grid = {}x{}\n\
             readout.hidden = {}\n\
             readout.ridge = {}\n\
             update.degradation_frac = {}\n\
             update.eval_chunk = {}\n\
             train.epochs = {}\n\
             train.lr = {}\n",
            self.lookback,
            self.horizon,
            self.stride,
            if self.denoise { "on" } else { "off" },
            self.mode.name(),
            self.ablation.name(),
            self.split.train,
            self.split.val,
            self.split.test,
            self.wavelet.family.name(),
            self.wavelet.levels,
            self.wavelet.a,
            gamma,
            self.channels,
            self.kernel_len,
            self.pool_kernel_len,
            dilations.join(","),
            pool,
            self.grid.0,
            self.grid.1,
            hidden,
            self.ridge,
            self.degradation_frac,
            self.eval_chunk,
            self.epochs,
            self.learning_rate,
        )
    }
}

fn parse_on_off(v: &str) -> Result<bool> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(Error::config(format!("expected on/off, got '{other}'"))),
    }
}
