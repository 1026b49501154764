//! Canonical polyadic decomposition by alternating least squares, and the
//! Hessian-based initialization of the linear transform.
//!
//! The tensor is decomposed as `T ≈ Σ_ℓ a_ℓ ⊗ b_ℓ ⊗ c_ℓ` with three free
//! factors. For Hessian stacks the first two modes are symmetric, so `A` and
//! `B` both estimate the transform and are merged afterwards by
//! [`symmetrize_to_v`].

use nalgebra::{DMatrix, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RegressionDataset;
use crate::error::{Error, Result};
use crate::hessian::{stack_hessians, uniform_subsample, Tensor3};
use crate::polyfit::PolyNarxModel;

/// Gram matrices with reciprocal condition below this are treated as singular.
const GRAM_RCOND_MIN: f64 = 1e-13;
/// Slices per work unit in the reductions; fixed so sums are reproducible.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdOptions {
    pub max_iter: usize,
    /// Stop when the relative reconstruction error changes by less than this.
    pub tol: f64,
    /// Number of random initializations; the best fit is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CpdOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CpdFactors {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `‖T − [[A,B,C]]‖ / ‖T‖` (zero for the zero tensor)
    pub rel_error: f64,
    pub iterations: usize,
    /// Squared reconstruction error after every sweep of the kept run.
    pub objective_history: Vec<f64>,
}

impl CpdFactors {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn reconstruct(&self) -> Tensor3 {
        Tensor3::from_factors(&self.a, &self.b, &self.c).expect("consistent factor ranks")
    }
}

fn random_factor(rng: &mut ChaCha8Rng, rows: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, r, |_, _| StandardNormal.sample(rng))
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}

/// Chunked parallel sum over frontal slices with a fixed reduction order.
fn slice_reduce<F>(t: &Tensor3, rows: usize, cols: usize, f: F) -> DMatrix<f64>
where
    F: Fn(usize, &mut DMatrix<f64>) + Sync,
{
    let k = t.dims()[2];
    let partials: Vec<DMatrix<f64>> = (0..k.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = DMatrix::zeros(rows, cols);
            for kk in chunk * CHUNK..((chunk + 1) * CHUNK).min(k) {
                f(kk, &mut acc);
            }
            acc
        })
        .collect();
    partials
        .into_iter()
        .fold(DMatrix::zeros(rows, cols), |acc, p| acc + p)
}

/// `T₍₁₎ (C ⊙ B)`
fn mttkrp_a(t: &Tensor3, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let [i, _, _] = t.dims();
    let r = b.ncols();
    slice_reduce(t, i, r, |k, acc| {
        let mut sb = t.slice(k) * b;
        for (l, mut col) in sb.column_iter_mut().enumerate() {
            col *= c[(k, l)];
        }
        *acc += sb;
    })
}

/// `T₍₂₎ (C ⊙ A)`
fn mttkrp_b(t: &Tensor3, a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let [_, j, _] = t.dims();
    let r = a.ncols();
    slice_reduce(t, j, r, |k, acc| {
        let mut sa = t.slice(k).tr_mul(a);
        for (l, mut col) in sa.column_iter_mut().enumerate() {
            col *= c[(k, l)];
        }
        *acc += sa;
    })
}

/// `T₍₃₎ (B ⊙ A)`
fn mttkrp_c(t: &Tensor3, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let [_, _, k] = t.dims();
    let r = a.ncols();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|kk| {
            let sb = t.slice(kk) * b;
            (0..r).map(|l| a.column(l).dot(&sb.column(l))).collect()
        })
        .collect();
    DMatrix::from_fn(k, r, |kk, l| rows[kk][l])
}

fn squared_error(t: &Tensor3, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let r = a.ncols();
    let total = slice_reduce(t, 1, 1, |k, acc| {
        let mut model = DMatrix::zeros(a.nrows(), b.nrows());
        for l in 0..r {
            model += c[(k, l)] * a.column(l) * b.column(l).transpose();
        }
        let diff = t.slice(k) - model;
        acc[(0, 0)] += diff.norm_squared();
    });
    total[(0, 0)]
}

/// Solves `X G = M` for symmetric positive semi-definite `G`, or `None` when
/// `G` is numerically singular.
fn solve_gram(m: &DMatrix<f64>, g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = SVD::new(g.clone(), true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    if !(smax > 0.0) || sv.min() / smax < GRAM_RCOND_MIN {
        return None;
    }
    let xt = svd.solve(&m.transpose(), 0.0).ok()?;
    Some(xt.transpose())
}

struct Run {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    sq_err: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn als_run(t: &Tensor3, r: usize, opts: &CpdOptions, seed: u64, t_norm: f64) -> Option<Run> {
    let [di, dj, dk] = t.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = random_factor(&mut rng, di, r);
    let mut b = random_factor(&mut rng, dj, r);
    let mut c = random_factor(&mut rng, dk, r);
    normalize_columns(&mut a);
    normalize_columns(&mut b);

    let mut history = Vec::new();
    let mut prev_rel = f64::INFINITY;
    let mut iterations = 0;
    let mut sq_err = f64::INFINITY;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let g = (b.tr_mul(&b)).component_mul(&c.tr_mul(&c));
        a = solve_gram(&mttkrp_a(t, &b, &c), &g)?;
        normalize_columns(&mut a);

        let g = (a.tr_mul(&a)).component_mul(&c.tr_mul(&c));
        b = solve_gram(&mttkrp_b(t, &a, &c), &g)?;
        normalize_columns(&mut b);

        let g = (a.tr_mul(&a)).component_mul(&b.tr_mul(&b));
        c = solve_gram(&mttkrp_c(t, &a, &b), &g)?;

        sq_err = squared_error(t, &a, &b, &c);
        history.push(sq_err);
        let rel = sq_err.sqrt() / t_norm;
        if !rel.is_finite() {
            return None;
        }
        if (prev_rel - rel).abs() < opts.tol || rel < 1e-15 {
            break;
        }
        prev_rel = rel;
    }
    Some(Run {
        a,
        b,
        c,
        sq_err,
        iterations,
        history,
    })
}

/// Rank-`r` CP decomposition by alternating least squares.
///
/// Each restart draws standard-normal factors from a ChaCha stream seeded
/// with `seed + attempt`; the attempt with the smallest reconstruction error
/// wins. `A` and `B` come back with unit-norm columns, `C` carries the scale.
pub fn cpd_als(t: &Tensor3, r: usize, opts: &CpdOptions) -> Result<CpdFactors> {
    let [di, dj, dk] = t.dims();
    if r == 0 || r > (di * dj).min(dk) {
        return Err(Error::invalid(format!(
            "CPD rank {r} outside 1..={}",
            (di * dj).min(dk)
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("CPD max_iter must be at least 1"));
    }
    let t_norm = t.norm();
    if t_norm == 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut a = random_factor(&mut rng, di, r);
        let mut b = random_factor(&mut rng, dj, r);
        normalize_columns(&mut a);
        normalize_columns(&mut b);
        return Ok(CpdFactors {
            a,
            b,
            c: DMatrix::zeros(dk, r),
            rel_error: 0.0,
            iterations: 0,
            objective_history: vec![0.0],
        });
    }

    let attempts = opts.restarts.max(1);
    let mut best: Option<Run> = None;
    for attempt in 0..attempts {
        let seed = opts.seed.wrapping_add(attempt as u64);
        match als_run(t, r, opts, seed, t_norm) {
            Some(run) => {
                if best.as_ref().is_none_or(|b| run.sq_err < b.sq_err) {
                    best = Some(run);
                }
            }
            None => log::warn!("cpd: singular normal equations (attempt {attempt}), restarting"),
        }
    }
    let run = best.ok_or(Error::SingularCpd { attempts })?;
    Ok(CpdFactors {
        rel_error: run.sq_err.sqrt() / t_norm,
        a: run.a,
        b: run.b,
        c: run.c,
        iterations: run.iterations,
        objective_history: run.history,
    })
}

/// Output of [`symmetrize_to_v`].
#[derive(Clone, Debug)]
pub struct Symmetrized {
    /// Unit-norm columns estimating the transform.
    pub v: DMatrix<f64>,
    /// Third-mode factor with every scale and sign absorbed.
    pub w: DMatrix<f64>,
    /// Cosine between each aligned `A`/`B` column pair.
    pub cosines: Vec<f64>,
}

/// Merges the `A` and `B` factors of a tensor symmetric in its first two
/// modes into one transform.
///
/// Each `B` column is sign-aligned to its `A` partner, both are unit
/// normalized, averaged and normalized again. The sign and the removed norms
/// go into `W` so that `a ⊗ b ⊗ c = â ⊗ b̂ ⊗ w` holds for every term.
pub fn symmetrize_to_v(f: &CpdFactors) -> Symmetrized {
    let (m, r) = f.a.shape();
    let mut v = DMatrix::zeros(m, r);
    let mut w = f.c.clone();
    let mut cosines = Vec::with_capacity(r);
    for l in 0..r {
        let a = f.a.column(l);
        let b = f.b.column(l);
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            cosines.push(0.0);
            w.column_mut(l).fill(0.0);
            continue;
        }
        let cos = a.dot(&b) / (na * nb);
        let sign = if cos < 0.0 { -1.0 } else { 1.0 };
        if cos.abs() < 0.5 {
            log::warn!("cpd: factor pair {l} nearly orthogonal (cos = {cos:.3}); tensor may not be symmetric");
        }
        cosines.push(cos.abs());
        let mut col = a / na + b * (sign / nb);
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        } else {
            col = a / na;
        }
        v.set_column(l, &col);
        w.column_mut(l).scale_mut(sign * na * nb);
    }
    Symmetrized { v, w, cosines }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct InitOptions {
    pub cpd: CpdOptions,
    /// Operating points used for the Hessian stack; `None` uses every row.
    pub max_points: Option<usize>,
}


#[derive(Clone, Debug)]
pub struct InitResult {
    pub v0: DMatrix<f64>,
    pub factors: CpdFactors,
    pub n_points: usize,
}

/// Hessian stack → rank-`n` CPD → symmetrized transform `V0` (m × n).
pub fn init_transform(
    dataset: &RegressionDataset,
    poly: &PolyNarxModel,
    n: usize,
    opts: &InitOptions,
) -> Result<InitResult> {
    let m = dataset.dim();
    if n == 0 || n > m {
        return Err(Error::invalid(format!("network width n = {n} must be in 1..={m}")));
    }
    let rows = uniform_subsample(dataset.len(), opts.max_points.unwrap_or(usize::MAX));
    let points = if rows.len() == dataset.len() {
        dataset.regressors.clone()
    } else {
        dataset.regressors.select_rows(&rows)
    };
    let hess = stack_hessians(poly, &points)?;
    let n_points = hess.n_points();
    let factors = cpd_als(&hess.tensor, n, &opts.cpd)?;
    let v0 = symmetrize_to_v(&factors).v;
    Ok(InitResult {
        v0,
        factors,
        n_points,
    })
}
