//! The univariate-ReLU network: linear transform, per-dimension knot grid,
//! basis matrix and forward evaluation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Predictor, RegressorSpec};
use crate::error::{Error, Result};

/// Uniform grid `s = [0, 1/q, …, (q−1)/q]`.
pub fn grid_levels(q: usize) -> Vec<f64> {
    (0..q).map(|j| j as f64 / q as f64).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// `β_ij = min(x_i) + (max(x_i) − min(x_i))·s_j`
    #[default]
    Uniform,
    /// `β_ij` at the empirical `s_j` quantile of `x_i`
    Quantile,
}

/// Knot grid derived from one intermediate data matrix `X`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasGrid {
    /// n × q knot matrix
    pub beta: DMatrix<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Sample index attaining the minimum of each column (lowest on ties).
    pub argmin: Vec<usize>,
    /// Sample index attaining the maximum of each column (lowest on ties).
    pub argmax: Vec<usize>,
    pub mode: BiasMode,
}

impl BiasGrid {
    pub fn q(&self) -> usize {
        self.beta.ncols()
    }

    pub fn n(&self) -> usize {
        self.beta.nrows()
    }

    /// Column `i` of `X` was constant, so its knots coincide.
    pub fn is_degenerate(&self, i: usize) -> bool {
        self.x_max[i] <= self.x_min[i]
    }
}

fn column_extrema(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, Vec<usize>, Vec<usize>) {
    let n = x.ncols();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let mut ilo = vec![0; n];
    let mut ihi = vec![0; n];
    for (i, col) in x.column_iter().enumerate() {
        let (mut kmin, mut kmax) = (0, 0);
        for (k, &v) in col.iter().enumerate() {
            if v < col[kmin] {
                kmin = k;
            }
            if v > col[kmax] {
                kmax = k;
            }
        }
        lo[i] = col[kmin];
        hi[i] = col[kmax];
        ilo[i] = kmin;
        ihi[i] = kmax;
    }
    (lo, hi, ilo, ihi)
}

fn check_grid_args(x: &DMatrix<f64>, q: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("bias grid needs a non-empty X"));
    }
    if q < 2 {
        return Err(Error::invalid(format!("q must be at least 2, got {q}")));
    }
    Ok(())
}

/// Uniform range grid over each column of `X`.
pub fn bias_grid(x: &DMatrix<f64>, q: usize) -> Result<BiasGrid> {
    check_grid_args(x, q)?;
    let (x_min, x_max, argmin, argmax) = column_extrema(x);
    let beta = DMatrix::from_fn(x.ncols(), q, |i, j| {
        let range = x_max[i] - x_min[i];
        range * j as f64 / q as f64 + x_min[i]
    });
    Ok(BiasGrid {
        beta,
        x_min,
        x_max,
        argmin,
        argmax,
        mode: BiasMode::Uniform,
    })
}

/// Empirical-quantile grid (linear interpolation between order statistics).
pub fn quantile_bias_grid(x: &DMatrix<f64>, q: usize) -> Result<BiasGrid> {
    check_grid_args(x, q)?;
    let (x_min, x_max, argmin, argmax) = column_extrema(x);
    let levels = grid_levels(q);
    let mut beta = DMatrix::zeros(x.ncols(), q);
    for (i, col) in x.column_iter().enumerate() {
        let mut sorted: Vec<f64> = col.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let last = (sorted.len() - 1) as f64;
        for (j, p) in levels.iter().enumerate() {
            let pos = p * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            beta[(i, j)] = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
        }
    }
    Ok(BiasGrid {
        beta,
        x_min,
        x_max,
        argmin,
        argmax,
        mode: BiasMode::Quantile,
    })
}

pub fn make_grid(x: &DMatrix<f64>, q: usize, mode: BiasMode) -> Result<BiasGrid> {
    match mode {
        BiasMode::Uniform => bias_grid(x, q),
        BiasMode::Quantile => quantile_bias_grid(x, q),
    }
}

/// `X = U V`
pub fn transform(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() != v.nrows() {
        return Err(Error::DimensionMismatch {
            context: "transform (U columns vs V rows)",
            expected: v.nrows(),
            actual: u.ncols(),
        });
    }
    Ok(u * v)
}

/// Basis matrix with column `i·q + j` equal to `max(0, x_i − β_ij)`.
pub fn build_basis(x: &DMatrix<f64>, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, n) = x.shape();
    if beta.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "basis (X columns vs beta rows)",
            expected: n,
            actual: beta.nrows(),
        });
    }
    let q = beta.ncols();
    let mut b = DMatrix::zeros(rows, n * q);
    for i in 0..n {
        let xi = x.column(i);
        for j in 0..q {
            let knot = beta[(i, j)];
            let mut col = b.column_mut(i * q + j);
            for (dst, &v) in col.iter_mut().zip(xi.iter()) {
                *dst = (v - knot).max(0.0);
            }
        }
    }
    Ok(b)
}

/// Trained network with its knot grid frozen from the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct UReluNet {
    v: DMatrix<f64>,
    q: usize,
    beta: DMatrix<f64>,
    w: DVector<f64>,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
    regressor_spec: Option<RegressorSpec>,
}

impl UReluNet {
    pub fn new(
        v: DMatrix<f64>,
        beta: DMatrix<f64>,
        w: DVector<f64>,
        x_min: Vec<f64>,
        x_max: Vec<f64>,
    ) -> Result<Self> {
        let (m, n) = v.shape();
        let q = beta.ncols();
        if m == 0 || n == 0 {
            return Err(Error::invalid("transform V must be non-empty"));
        }
        if q < 2 {
            return Err(Error::invalid(format!("q must be at least 2, got {q}")));
        }
        if beta.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "beta rows",
                expected: n,
                actual: beta.nrows(),
            });
        }
        if w.len() != n * q + 1 {
            return Err(Error::DimensionMismatch {
                context: "weight vector length",
                expected: n * q + 1,
                actual: w.len(),
            });
        }
        if x_min.len() != n || x_max.len() != n {
            return Err(Error::DimensionMismatch {
                context: "x range length",
                expected: n,
                actual: x_min.len().min(x_max.len()),
            });
        }
        Ok(Self {
            v,
            q,
            beta,
            w,
            x_min,
            x_max,
            regressor_spec: None,
        })
    }

    /// Network whose knot grid comes from `grid`.
    pub fn from_grid(v: DMatrix<f64>, grid: &BiasGrid, w: DVector<f64>) -> Result<Self> {
        Self::new(v, grid.beta.clone(), w, grid.x_min.clone(), grid.x_max.clone())
    }

    pub fn with_regressor_spec(mut self, spec: Option<RegressorSpec>) -> Self {
        self.regressor_spec = spec;
        self
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.v.ncols()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn x_min(&self) -> &[f64] {
        &self.x_min
    }

    pub fn x_max(&self) -> &[f64] {
        &self.x_max
    }

    pub fn regressor_spec(&self) -> Option<RegressorSpec> {
        self.regressor_spec
    }

    /// Weight of ramp `j` on dimension `i`.
    pub fn ramp_weight(&self, i: usize, j: usize) -> f64 {
        self.w[1 + i * self.q + j]
    }

    /// Trainable parameters: `m·n` transform entries, `n·q` ramp weights and
    /// the constant weight. Knots are data-derived and not counted.
    pub fn param_count(&self) -> usize {
        param_count(self.m(), self.n(), self.q)
    }

    /// `ŷ = [1, B(UV)]·w` with the frozen knots.
    pub fn forward(&self, u: &DMatrix<f64>) -> Result<DVector<f64>> {
        let x = transform(u, &self.v)?;
        Ok(self.forward_x(&x))
    }

    pub(crate) fn forward_x(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let b = build_basis(x, &self.beta).expect("beta matches V");
        let mut y = &b * self.w.rows(1, self.w.len() - 1);
        y.add_scalar_mut(self.w[0]);
        y
    }

    /// Output at one intermediate point `x = Vᵀu`.
    pub fn eval_x(&self, x: &[f64]) -> f64 {
        let mut y = self.w[0];
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..self.q {
                let r = xi - self.beta[(i, j)];
                if r > 0.0 {
                    y += self.ramp_weight(i, j) * r;
                }
            }
        }
        y
    }

    /// `x = Vᵀu` for one regressor vector.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.v.column(i).iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl Predictor for UReluNet {
    fn predict(&self, phi: &[f64]) -> f64 {
        self.eval_x(&self.project(phi))
    }
}

pub fn param_count(m: usize, n: usize, q: usize) -> usize {
    m * n + n * q + 1
}

/// On-disk model layout; matrices are row-major.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    m: usize,
    n: usize,
    q: usize,
    #[serde(rename = "V")]
    v: Vec<f64>,
    beta: Vec<f64>,
    w: Vec<f64>,
    regressor_spec: Option<RegressorSpec>,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&UReluNet> for ModelFile {
    fn from(net: &UReluNet) -> Self {
        Self {
            m: net.m(),
            n: net.n(),
            q: net.q,
            v: row_major(&net.v),
            beta: row_major(&net.beta),
            w: net.w.as_slice().to_vec(),
            regressor_spec: net.regressor_spec,
            x_min: net.x_min.clone(),
            x_max: net.x_max.clone(),
        }
    }
}

impl TryFrom<ModelFile> for UReluNet {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.v.len() != f.m * f.n {
            return Err(Error::DimensionMismatch {
                context: "model file V",
                expected: f.m * f.n,
                actual: f.v.len(),
            });
        }
        if f.beta.len() != f.n * f.q {
            return Err(Error::DimensionMismatch {
                context: "model file beta",
                expected: f.n * f.q,
                actual: f.beta.len(),
            });
        }
        if let Some(spec) = f.regressor_spec {
            if spec.dim() != f.m {
                return Err(Error::DimensionMismatch {
                    context: "model file regressor spec",
                    expected: f.m,
                    actual: spec.dim(),
                });
            }
        }
        let v = DMatrix::from_row_slice(f.m, f.n, &f.v);
        let beta = DMatrix::from_row_slice(f.n, f.q, &f.beta);
        let net = UReluNet::new(v, beta, DVector::from_vec(f.w), f.x_min, f.x_max)?;
        Ok(net.with_regressor_spec(f.regressor_spec))
    }
}
