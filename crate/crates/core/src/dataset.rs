//! Time-series ingestion, NARX regressor construction, free-run simulation
//! and error metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw input/output record of a single-input single-output system.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesData {
    u: Vec<f64>,
    y: Vec<f64>,
    sample_rate: f64,
}

impl TimeSeriesData {
    pub fn new(u: Vec<f64>, y: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "time series (u vs y length)",
                expected: u.len(),
                actual: y.len(),
            });
        }
        if u.is_empty() {
            return Err(Error::invalid("time series must contain at least one sample"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        Ok(Self { u, y, sample_rate })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Lag structure of the regression vector
/// `φ(t) = [u(t), …, u(t−n_u), y(t−1), …, y(t−n_y)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub n_u: usize,
    pub n_y: usize,
}

impl RegressorSpec {
    pub fn new(n_u: usize, n_y: usize) -> Result<Self> {
        if n_y == 0 {
            return Err(Error::invalid("n_y must be at least 1"));
        }
        Ok(Self { n_u, n_y })
    }

    /// Default 30-regressor split used for the hysteretic benchmark.
    pub fn benchmark() -> Self {
        Self { n_u: 15, n_y: 14 }
    }

    /// Regressor dimension `m = n_u + n_y + 1`.
    pub fn dim(&self) -> usize {
        self.n_u + self.n_y + 1
    }

    pub fn max_lag(&self) -> usize {
        self.n_u.max(self.n_y)
    }

    /// Writes `φ(t)` into `out`. Caller guarantees `t >= max_lag`.
    fn fill_row(&self, u: &[f64], y: &[f64], t: usize, out: &mut [f64]) {
        for lag in 0..=self.n_u {
            out[lag] = u[t - lag];
        }
        let off = self.n_u + 1;
        for lag in 1..=self.n_y {
            out[off + lag - 1] = y[t - lag];
        }
    }
}

/// Regressor matrix `U` (N × m) and target vector `y` (length N).
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub regressors: DMatrix<f64>,
    pub target: DVector<f64>,
    pub spec: Option<RegressorSpec>,
}

impl RegressionDataset {
    /// Wraps an arbitrary regression problem (no lag structure attached).
    pub fn new(regressors: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        if regressors.nrows() != target.len() {
            return Err(Error::DimensionMismatch {
                context: "regression dataset rows",
                expected: regressors.nrows(),
                actual: target.len(),
            });
        }
        if regressors.nrows() == 0 || regressors.ncols() == 0 {
            return Err(Error::invalid("regression dataset must be non-empty"));
        }
        Ok(Self {
            regressors,
            target,
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.regressors.ncols()
    }

    /// Dataset restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            regressors: self.regressors.select_rows(rows),
            target: self.target.select_rows(rows),
            spec: self.spec,
        }
    }
}

pub fn build_regressors(data: &TimeSeriesData, spec: RegressorSpec) -> Result<RegressionDataset> {
    let lag = spec.max_lag();
    let len = data.len();
    if len <= lag {
        return Err(Error::SeriesTooShort {
            required: lag + 1,
            actual: len,
        });
    }
    let rows = len - lag;
    let m = spec.dim();
    let mut regressors = DMatrix::zeros(rows, m);
    let mut row = vec![0.0; m];
    for (r, t) in (lag..len).enumerate() {
        spec.fill_row(&data.u, &data.y, t, &mut row);
        for (c, v) in row.iter().enumerate() {
            regressors[(r, c)] = *v;
        }
    }
    let target = DVector::from_iterator(rows, data.y[lag..].iter().copied());
    Ok(RegressionDataset {
        regressors,
        target,
        spec: Some(spec),
    })
}

/// One-step NARX predictor `g(φ)`.
pub trait Predictor {
    fn predict(&self, phi: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64,
{
    fn predict(&self, phi: &[f64]) -> f64 {
        self(phi)
    }
}

/// Simulates the model using only the input record.
///
/// The first `max_lag` entries of the output are copied from `y_init`; every
/// later value is predicted from past *simulated* outputs.
pub fn simulate_free_run<P: Predictor + ?Sized>(
    model: &P,
    u: &[f64],
    y_init: &[f64],
    spec: RegressorSpec,
) -> Result<Vec<f64>> {
    let seed = spec.max_lag();
    if y_init.len() < seed {
        return Err(Error::SeriesTooShort {
            required: seed,
            actual: y_init.len(),
        });
    }
    if u.len() < seed {
        return Err(Error::SeriesTooShort {
            required: seed,
            actual: u.len(),
        });
    }
    let mut ys = Vec::with_capacity(u.len());
    ys.extend_from_slice(&y_init[..seed]);
    let mut phi = vec![0.0; spec.dim()];
    for t in seed..u.len() {
        spec.fill_row(u, &ys, t, &mut phi);
        let next = model.predict(&phi);
        if !next.is_finite() {
            return Err(Error::Diverged { index: t });
        }
        ys.push(next);
    }
    Ok(ys)
}

pub fn rmse(y: &[f64], y_sim: &[f64]) -> Result<f64> {
    if y.len() != y_sim.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse",
            expected: y.len(),
            actual: y_sim.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::invalid("rmse of empty sequences"));
    }
    let sse: f64 = y.iter().zip(y_sim).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// `20·log10(rmse)`.
pub fn rmse_db(rmse: f64) -> Result<f64> {
    if rmse.is_nan() || rmse < 0.0 {
        return Err(Error::invalid(format!("rmse must be non-negative, got {rmse}")));
    }
    if rmse == 0.0 {
        return Err(Error::invalid("rmse of zero is -inf dB"));
    }
    Ok(20.0 * rmse.log10())
}

/// Reads a two-column (u, y) CSV file. A single non-numeric header line is
/// skipped.
pub fn load_csv(path: impl AsRef<Path>, sample_rate: f64) -> Result<TimeSeriesData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", record.len())));
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => {
                u.push(a);
                y.push(b);
            }
            _ if idx == 0 => continue,
            _ => return Err(parse_err(format!("non-numeric row {:?}", record.as_slice()))),
        }
    }
    if u.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no data rows".into(),
        });
    }
    TimeSeriesData::new(u, y, sample_rate)
}

/// Writes `u,y` header plus one row per sample using shortest round-trip
/// float formatting.
pub fn save_csv(path: impl AsRef<Path>, data: &TimeSeriesData) -> Result<()> {
    write_columns(path, ("u", "y"), data.u(), data.y())
}

pub(crate) fn write_columns(
    path: impl AsRef<Path>,
    header: (&str, &str),
    a: &[f64],
    b: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{},{}", header.0, header.1).map_err(io)?;
    for (x, y) in a.iter().zip(b) {
        writeln!(w, "{x},{y}").map_err(io)?;
    }
    w.flush().map_err(io)
}
