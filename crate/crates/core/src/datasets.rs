//! Dataset adapters: CSV ingestion with chronological splits, plus seeded
//! synthetic generators for desk-scale experiments.

use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::SeriesFrame;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Chronological train/validation/test split by row counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Ratio-based split spec, e.g. the default `7:1:2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 7.0,
            val: 1.0,
            test: 2.0,
        }
    }
}

impl SplitSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::config(format!("split '{s}' is not of the form a:b:c")));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("split component '{p}' is not a number")))
            })
            .collect::<Result<_>>()?;
        if nums.iter().any(|&v| v < 0.0) || nums.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("split ratios must be non-negative and not all zero"));
        }
        Ok(SplitSpec {
            train: nums[0],
            val: nums[1],
            test: nums[2],
        })
    }

    /// Contiguous, non-overlapping, exhaustive row counts. Train gets the
    /// rounding remainder.
    pub fn apply(&self, t: usize) -> Split {
        let total = self.train + self.val + self.test;
        let val = ((t as f64) * self.val / total).floor() as usize;
        let test = ((t as f64) * self.test / total).floor() as usize;
        Split {
            train: t - val - test,
            val,
            test,
        }
    }
}

/// Load a CSV series: UTF-8, header row required, '.' decimal point, one
/// timestep per row. A non-numeric first column is treated as a timestamp
/// and skipped.
pub fn load_csv(path: &Path) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path.display().to_string(), std::io::Error::other(e.to_string())),
            _ => Error::Parse {
                row: 0,
                message: e.to_string(),
            },
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: format!("bad header: {e}"),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "empty header row".into(),
        });
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut timestamp_col = false;
    for (idx, record) in reader.records().enumerate() {
        // 1-based data row number, header is row 1
        let row_no = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_no,
                message: format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        if idx == 0 {
            // timestamp auto-detection: a first field that does not parse as
            // a number marks the first column as an index column
            timestamp_col = record.get(0).unwrap_or("").parse::<f64>().is_err();
            if timestamp_col && record.len() < 2 {
                return Err(Error::Parse {
                    row: row_no,
                    message: "only a timestamp column and no data columns".into(),
                });
            }
        }
        let start = usize::from(timestamp_col);
        let mut row = Vec::with_capacity(record.len() - start);
        for (col, field) in record.iter().enumerate().skip(start) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: row_no,
                message: format!("column '{}': '{field}' is not a number", headers[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    message: format!("column '{}': non-finite value {v}", headers[col]),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }

    if rows.len() < 2 {
        return Err(Error::config(format!(
            "{}: need at least 2 data rows, found {}",
            path.display(),
            rows.len()
        )));
    }
    let names = headers[usize::from(timestamp_col)..].to_vec();
    SeriesFrame::new(Tensor::from_rows(&rows), names)
}

/// Write a frame back out as CSV (raw values, no timestamp column).
pub fn write_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    w.write_record(&frame.var_names)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    for i in 0..frame.num_rows() {
        let row: Vec<String> = frame.values.row(i).iter().map(|v| format!("{v}")).collect();
        w.write_record(&row)
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Synthetic series kinds used by tests and the `generate` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Sum of incommensurate sines per variable.
    SineMix,
    /// Autoregressive process with an extra lag-60 dependency.
    ArLongMemory,
    /// Chaotic logistic map, `x <- r x (1 - x)` with r = 3.9.
    LogisticMap,
    /// Sine mix with a +3 sigma level shift injected at `shift_at`.
    MeanShift,
}

impl Generator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sine_mix" => Ok(Generator::SineMix),
            "ar_long_memory" => Ok(Generator::ArLongMemory),
            "logistic_map" => Ok(Generator::LogisticMap),
            "mean_shift" => Ok(Generator::MeanShift),
            other => Err(Error::config(format!(
                "unknown generator '{other}' (expected sine_mix, ar_long_memory, logistic_map or mean_shift)"
            ))),
        }
    }
}

/// Specification for a synthetic series; the same spec and seed always
/// produce the identical frame.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub rows: usize,
    pub vars: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub shift_at: Option<usize>,
}

impl SyntheticSpec {
    pub fn new(generator: Generator, rows: usize, vars: usize, seed: u64) -> Self {
        SyntheticSpec {
            generator,
            rows,
            vars,
            seed,
            noise_sigma: 0.0,
            shift_at: None,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_shift_at(mut self, at: usize) -> Self {
        self.shift_at = Some(at);
        self
    }
}

/// The sine periods cycle through this table per variable.
const SINE_PERIODS: [(f64, f64); 3] = [(24.0, 1.0), (12.0, 0.5), (8.0, 0.25)];

fn sine_value(i: usize, j: usize) -> f64 {
    let t = i as f64;
    let phase = j as f64 * 0.7;
    SINE_PERIODS
        .iter()
        .map(|&(p, amp)| amp * (2.0 * std::f64::consts::PI * t / p + phase).sin())
        .sum()
}

/// Produce a deterministic synthetic frame from a spec.
pub fn generate(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    if spec.rows < 2 || spec.vars < 1 {
        return Err(Error::config("synthetic spec needs rows >= 2 and vars >= 1"));
    }
    let (t, n) = (spec.rows, spec.vars);
    let root = Rng::from_seed(spec.seed);
    let mut values = Tensor::zeros(&[t, n]);

    match spec.generator {
        Generator::SineMix | Generator::MeanShift => {
            let mut noise = root.split("noise");
            for i in 0..t {
                for j in 0..n {
                    let mut v = sine_value(i, j);
                    if spec.noise_sigma > 0.0 {
                        v += spec.noise_sigma * noise.normal();
                    }
                    values.set2(i, j, v);
                }
            }
            if spec.generator == Generator::MeanShift {
                let at = spec.shift_at.unwrap_or(t / 2);
                // step of +3 sigma of the pre-shift signal, per variable
                for j in 0..n {
                    let col: Vec<f64> = (0..at.max(2)).map(|i| values.at2(i, j)).collect();
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    let var =
                        col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
                    let step = 3.0 * var.sqrt();
                    for i in at..t {
                        values.set2(i, j, values.at2(i, j) + step);
                    }
                }
            }
        }
        Generator::ArLongMemory => {
            let noise = root.split("ar");
            // x_t = 0.25 x_{t-1} + 0.6 x_{t-60} + eps; stationary and
            // dominated by the long lag
            for j in 0..n {
                let mut drv = noise.split_index(j as u64);
                let sigma = if spec.noise_sigma > 0.0 { spec.noise_sigma } else { 0.3 };
                let burn = 200;
                let mut hist = vec![0.0f64; t + burn];
                for i in 0..t + burn {
                    let prev = if i >= 1 { hist[i - 1] } else { 0.0 };
                    let long = if i >= 60 { hist[i - 60] } else { 0.0 };
                    hist[i] = 0.25 * prev + 0.6 * long + sigma * drv.normal();
                }
                for i in 0..t {
                    values.set2(i, j, hist[i + burn]);
                }
            }
        }
        Generator::LogisticMap => {
            let mut init = root.split("x0");
            let r = 3.9;
            for j in 0..n {
                let mut x = 0.2 + 0.6 * init.uniform();
                let mut drv = init.split_index(j as u64);
                for _ in 0..50 {
                    x = r * x * (1.0 - x);
                }
                for i in 0..t {
                    x = r * x * (1.0 - x);
                    let mut v = x;
                    if spec.noise_sigma > 0.0 {
                        v += spec.noise_sigma * drv.normal();
                    }
                    values.set2(i, j, v);
                }
            }
        }
    }

    let names = (0..n).map(|j| format!("v{j}")).collect();
    SeriesFrame::new(values, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn timestamp_column_is_detected_and_skipped() {
        let f = write_temp("date,a,b\n2021-01-01,1.0,2.0\n2021-01-02,3.0,4.0\n");
        let frame = load_csv(f.path()).unwrap();
        assert_eq!(frame.num_vars(), 2);
        assert_eq!(frame.var_names, vec!["a", "b"]);
        assert_eq!(frame.values.at2(1, 0), 3.0);
    }

    #[test]
    fn plain_numeric_csv_keeps_all_columns() {
        let f = write_temp("a,b,c\n1,2,3\n4,5,6\n");
        let frame = load_csv(f.path()).unwrap();
        assert_eq!(frame.num_vars(), 3);
    }

    #[test]
    fn malformed_row_cites_row_number() {
        let f = write_temp("a,b\n1.0,2.0\n3.0,oops\n");
        match load_csv(f.path()) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("oops"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_cell_cites_row_number() {
        let f = write_temp("a\n1.0\ninf\n2.0\n");
        match load_csv(f.path()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_arithmetic() {
        let s = SplitSpec::default().apply(100);
        assert_eq!(
            s,
            Split {
                train: 70,
                val: 10,
                test: 20
            }
        );
        // exhaustive for awkward totals too
        for t in [10usize, 37, 101, 997] {
            let s = SplitSpec::default().apply(t);
            assert_eq!(s.train + s.val + s.test, t);
        }
    }

    #[test]
    fn split_spec_parses() {
        let s = SplitSpec::parse("1:0:0").unwrap();
        let a = s.apply(8);
        assert_eq!(a, Split { train: 8, val: 0, test: 0 });
        assert!(SplitSpec::parse("1:2").is_err());
        assert!(SplitSpec::parse("a:b:c").is_err());
    }

    #[test]
    fn noiseless_sine_mix_is_periodic() {
        let spec = SyntheticSpec::new(Generator::SineMix, 120, 2, 1);
        let f = generate(&spec).unwrap();
        // lcm of periods 24, 12, 8 is 24
        for j in 0..2 {
            for i in 0..96 {
                let d = (f.values.at2(i, j) - f.values.at2(i + 24, j)).abs();
                assert!(d < 1e-12, "period violated at {i}: {d}");
            }
        }
    }

    #[test]
    fn logistic_map_range_and_decay() {
        let spec = SyntheticSpec::new(Generator::LogisticMap, 800, 1, 5);
        let f = generate(&spec).unwrap();
        let col = f.column(0);
        assert!(col.iter().all(|&v| v > 0.0 && v < 1.0));
        // chaotic map: autocorrelation magnitude decays with lag
        let acf = |lag: usize| {
            let n = col.len() - lag;
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            (0..n)
                .map(|i| (col[i] - mean) * (col[i + lag] - mean))
                .sum::<f64>()
                / (n as f64 * var)
        };
        assert!(acf(1).abs() > acf(20).abs());
    }

    #[test]
    fn same_seed_same_frame() {
        for g in [
            Generator::SineMix,
            Generator::ArLongMemory,
            Generator::LogisticMap,
            Generator::MeanShift,
        ] {
            let spec = SyntheticSpec::new(g, 200, 3, 9).with_noise(0.1);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.values, b.values, "{g:?} not deterministic");
        }
    }

    #[test]
    fn mean_shift_raises_level() {
        let spec = SyntheticSpec::new(Generator::MeanShift, 400, 1, 3)
            .with_noise(0.05)
            .with_shift_at(200);
        let f = generate(&spec).unwrap();
        let col = f.column(0);
        let before: f64 = col[..200].iter().sum::<f64>() / 200.0;
        let after: f64 = col[200..].iter().sum::<f64>() / 200.0;
        assert!(after - before > 1.0, "shift too small: {before} -> {after}");
    }

    #[test]
    fn csv_round_trip() {
        let spec = SyntheticSpec::new(Generator::SineMix, 50, 2, 7).with_noise(0.1);
        let f = generate(&spec).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        write_csv(&f, tmp.path()).unwrap();
        let back = load_csv(tmp.path()).unwrap();
        assert_eq!(back.num_rows(), 50);
        assert!(back.values.max_abs_diff(&f.values) < 1e-12);
    }
}
