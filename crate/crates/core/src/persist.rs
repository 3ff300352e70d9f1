//! Flat binary model container.
//!
//! Layout, all integers little-endian:
//!   magic "ACN1", format version u32, seed u64,
//!   config echo (u32 length + canonical UTF-8 text),
//!   variable names (u32 count, then u32 length + bytes each),
//!   baseline MSE f64,
//!   tensor count u32, shape table (u32 name length + name, u32 ndim,
//!   u32 extents), then the raw f64 data of every tensor in table order.
//!
//! The canonical config echo plus the seed reproduce the model
//! byte-for-byte, so identical training runs serialize identically.

use std::fs;
use std::path::Path;

use crate::config::PipelineConfig;
use crate::deform::DeformParams;
use crate::error::{Error, Result};
use crate::pipeline::ModelState;
use crate::preprocess::Stats;
use crate::readout::ReadoutParams;
use crate::temporal::TemporalParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ACN1";
const VERSION: u32 = 1;

fn named_tensors(model: &ModelState) -> Vec<(&'static str, Tensor)> {
    let mut out: Vec<(&'static str, Tensor)> = vec![
        ("stats.mu", Tensor::new(vec![model.stats.mu.len()], model.stats.mu.clone())),
        (
            "stats.sigma",
            Tensor::new(vec![model.stats.sigma.len()], model.stats.sigma.clone()),
        ),
        ("buffer", model.train_buffer.clone()),
    ];
    if let Some(t) = &model.temporal {
        out.push(("tfe.kernel", t.kernel.clone()));
        out.push(("tfe.bias", t.bias.clone()));
        out.push(("tfe.ln_scale", t.ln_scale.clone()));
        out.push(("tfe.ln_shift", t.ln_shift.clone()));
        out.push(("tfe.pool_kernel", t.pool_kernel.clone()));
    }
    if let Some(d) = &model.deform {
        out.push(("deform.kernel", d.def_kernel.clone()));
        out.push(("deform.offset_weight", d.offset_weight.clone()));
        out.push(("deform.offset_bias", d.offset_bias.clone()));
        out.push(("deform.gate_weight", d.gate_weight.clone()));
        out.push(("deform.gate_bias", d.gate_bias.clone()));
        out.push(("deform.mix", d.mix_weights.clone()));
    }
    out.push(("readout.omega", model.readout.omega.clone()));
    out.push(("readout.b", model.readout.b.clone()));
    if let Some(beta) = &model.readout.beta {
        out.push(("readout.beta", beta.clone()));
    }
    out
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    buf.extend_from_slice(&model.seed.to_le_bytes());
    push_str(&mut buf, &model.cfg.to_canonical_string());
    push_u32(&mut buf, model.var_names.len() as u32);
    for name in &model.var_names {
        push_str(&mut buf, name);
    }
    buf.extend_from_slice(&model.baseline_mse.to_le_bytes());

    let tensors = named_tensors(model);
    push_u32(&mut buf, tensors.len() as u32);
    for (name, t) in &tensors {
        push_str(&mut buf, name);
        push_u32(&mut buf, t.shape().len() as u32);
        for &d in t.shape() {
            push_u32(&mut buf, d as u32);
        }
    }
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                row: 0,
                message: format!("{}: truncated model file", self.path),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse {
            row: 0,
            message: format!("{}: invalid UTF-8 in model file", self.path),
        })
    }
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        buf: &data,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse {
            row: 0,
            message: format!("{}: not a model file (bad magic)", path.display()),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            row: 0,
            message: format!("{}: unsupported model version {version}", path.display()),
        });
    }
    let seed = r.u64()?;
    let echo = r.string()?;
    let mut cfg = PipelineConfig::default();
    cfg.apply_text(&echo)?;
    let n_names = r.u32()? as usize;
    let mut var_names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        var_names.push(r.string()?);
    }
    let baseline_mse = r.f64()?;

    let n_tensors = r.u32()? as usize;
    let mut table = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        table.push((name, shape));
    }
    let mut tensors = std::collections::BTreeMap::new();
    for (name, shape) in table {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        tensors.insert(name, Tensor::new(shape, data));
    }

    let mut grab = |name: &str| -> Result<Tensor> {
        tensors.remove(name).ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("{}: model file missing tensor '{name}'", path.display()),
        })
    };

    let mu = grab("stats.mu")?.into_data();
    let sigma = grab("stats.sigma")?.into_data();
    let train_buffer = grab("buffer")?;
    let temporal = if cfg.ablation.uses_temporal() {
        Some(TemporalParams {
            kernel: grab("tfe.kernel")?,
            bias: grab("tfe.bias")?,
            ln_scale: grab("tfe.ln_scale")?,
            ln_shift: grab("tfe.ln_shift")?,
            pool_kernel: grab("tfe.pool_kernel")?,
            dilations: cfg.dilations.clone(),
            pool_out_len: cfg.resolved_pool_out_len(),
        })
    } else {
        None
    };
    let deform = if cfg.ablation.uses_deform() {
        Some(DeformParams {
            def_kernel: grab("deform.kernel")?,
            offset_weight: grab("deform.offset_weight")?,
            offset_bias: grab("deform.offset_bias")?,
            gate_weight: grab("deform.gate_weight")?,
            gate_bias: grab("deform.gate_bias")?,
            mix_weights: grab("deform.mix")?,
            grid: cfg.grid,
        })
    } else {
        None
    };
    let readout = ReadoutParams {
        omega: grab("readout.omega")?,
        b: grab("readout.b")?,
        beta: tensors.remove("readout.beta"),
        ridge: cfg.ridge,
    };

    Ok(ModelState {
        cfg,
        seed,
        var_names,
        stats: Stats {
            mu,
            sigma,
            clamped: Vec::new(),
        },
        temporal,
        deform,
        readout,
        baseline_mse,
        train_buffer,
    })
}
