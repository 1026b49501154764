//! Variable-projection training of the network.
//!
//! For a fixed transform `V` the weights are the least-squares solution over
//! `B̃ = [1, B(V)]`, so only `V` is optimized. The residual
//! `r(V) = (I − B̃B̃†) y` is minimized by Levenberg-Marquardt on `vec(V)`
//! (column-major, variable `v_st` at index `t·m + s`) using the exact
//! derivative of the basis with respect to `V`, the knots included.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{rmse_db, RegressionDataset};
use crate::error::{Error, Result};
use crate::linalg::{ThinSvd, PINV_RTOL};
use crate::urelu::{build_basis, grid_levels, make_grid, transform, BiasGrid, BiasMode, UReluNet};

/// Damping beyond which training gives up.
const LAMBDA_MAX: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// Golub-Pereyra derivative of the projected residual.
    Full,
    /// Kaufman's approximation, which drops the second Golub-Pereyra term.
    #[default]
    Kaufman,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub lm_lambda0: f64,
    pub lm_up: f64,
    pub lm_down: f64,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub jacobian_mode: JacobianMode,
    /// Seeds the holdout split.
    pub rng_seed: u64,
    /// Fraction of rows held out for monitoring only; never used to stop.
    pub holdout_fraction: f64,
    pub bias_mode: BiasMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            lm_lambda0: 1e-3,
            lm_up: 10.0,
            lm_down: 10.0,
            grad_tol: 1e-12,
            step_tol: 1e-10,
            jacobian_mode: JacobianMode::Kaufman,
            rng_seed: 0,
            holdout_fraction: 0.0,
            bias_mode: BiasMode::Uniform,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.lm_up > 1.0 && self.lm_down > 1.0) {
            return Err(Error::invalid("LM multipliers must exceed 1"));
        }
        if !(self.lm_lambda0 > 0.0) {
            return Err(Error::invalid("lm_lambda0 must be positive"));
        }
        if !(0.0..0.95).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout_fraction must lie in [0, 0.95)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    MaxIter,
    GradientTolerance,
    StepTolerance,
    Stalled,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// `‖r‖²` at the starting point and after every accepted step.
    pub residual_history: Vec<f64>,
    pub final_rmse: f64,
    /// `None` when the training fit is exact.
    pub final_rmse_db: Option<f64>,
    pub status: TrainStatus,
    pub final_lambda: f64,
    pub weight_rank: usize,
    /// One-step RMSE on the holdout rows after every accepted step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_rmse: Option<Vec<f64>>,
}

impl TrainReport {
    pub fn write_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("step,residual_sq\n");
        for (i, r) in self.residual_history.iter().enumerate() {
            s.push_str(&format!("{i},{r}\n"));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Least-squares weights over `[1, B]`.
#[derive(Clone, Debug)]
pub struct WeightSolution {
    /// `w_0` followed by one weight per basis column.
    pub w: DVector<f64>,
    pub rank: usize,
    pub residual: DVector<f64>,
}

fn augment(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = basis.shape();
    let mut a = DMatrix::zeros(n, p + 1);
    a.column_mut(0).fill(1.0);
    a.columns_mut(1, p).copy_from(basis);
    a
}

/// Minimum-norm least-squares weights `w = [1, B]† y`.
pub fn solve_weights(basis: &DMatrix<f64>, y: &DVector<f64>) -> Result<WeightSolution> {
    if basis.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "solve_weights rows",
            expected: basis.nrows(),
            actual: y.len(),
        });
    }
    let a = augment(basis);
    let svd = ThinSvd::new(&a, PINV_RTOL);
    let w = svd.solve(y);
    let residual = y - &a * &w;
    Ok(WeightSolution {
        w,
        rank: svd.rank(),
        residual,
    })
}

/// Everything derived from one transform `V` on one dataset.
#[derive(Clone, Debug)]
pub struct VpPoint {
    pub x: DMatrix<f64>,
    pub grid: BiasGrid,
    pub basis: DMatrix<f64>,
    pub svd: ThinSvd,
    pub w: DVector<f64>,
    pub residual: DVector<f64>,
}

impl VpPoint {
    pub fn cost(&self) -> f64 {
        self.residual.norm_squared()
    }
}

pub fn evaluate(v: &DMatrix<f64>, ds: &RegressionDataset, q: usize, mode: BiasMode) -> Result<VpPoint> {
    let x = transform(&ds.regressors, v)?;
    let grid = make_grid(&x, q, mode)?;
    let basis = build_basis(&x, &grid.beta)?;
    let a = augment(&basis);
    let svd = ThinSvd::new(&a, PINV_RTOL);
    let w = svd.solve(&ds.target);
    let residual = &ds.target - &a * &w;
    Ok(VpPoint {
        x,
        grid,
        basis,
        svd,
        w,
        residual,
    })
}

/// `r(V) = y − [1, B(V)]·[1, B(V)]† y` with the knots recomputed from `X = UV`.
pub fn vp_residual(v: &DMatrix<f64>, ds: &RegressionDataset, q: usize) -> Result<DVector<f64>> {
    Ok(evaluate(v, ds, q, BiasMode::Uniform)?.residual)
}

/// Least-squares network for a fixed transform.
pub fn fit_net(v: &DMatrix<f64>, ds: &RegressionDataset, q: usize, mode: BiasMode) -> Result<UReluNet> {
    let p = evaluate(v, ds, q, mode)?;
    Ok(UReluNet::from_grid(v.clone(), &p.grid, p.w)?.with_regressor_spec(ds.spec))
}

/// Derivative of the basis matrix with respect to the transform.
///
/// Entry `(k, (i,j))` with respect to `v_st` is zero unless `t = i` and the
/// ramp is active (`x_i(k) − β_ij > 0`); otherwise it is
/// `u_s(k) − ∂β_ij/∂v_st` where, on the uniform grid,
/// `∂β_ij/∂v_si = s_j·[u_s(k_max,i) − u_s(k_min,i)] + u_s(k_min,i)`.
pub struct BasisDerivative<'a> {
    u: &'a DMatrix<f64>,
    x: &'a DMatrix<f64>,
    grid: &'a BiasGrid,
    levels: Vec<f64>,
    frozen_knots: bool,
}

impl<'a> BasisDerivative<'a> {
    fn new(u: &'a DMatrix<f64>, x: &'a DMatrix<f64>, grid: &'a BiasGrid, frozen_knots: bool) -> Self {
        Self {
            u,
            x,
            grid,
            levels: grid_levels(grid.q()),
            frozen_knots,
        }
    }

    /// Derivative with the knots treated as constants.
    pub fn frozen(u: &'a DMatrix<f64>, x: &'a DMatrix<f64>, grid: &'a BiasGrid) -> Self {
        Self::new(u, x, grid, true)
    }

    pub fn is_active(&self, k: usize, i: usize, j: usize) -> bool {
        self.x[(k, i)] - self.grid.beta[(i, j)] > 0.0
    }

    /// `∂β_ij / ∂v_si`
    pub fn knot_derivative(&self, i: usize, j: usize, s: usize) -> f64 {
        if self.frozen_knots {
            return 0.0;
        }
        let lo = self.u[(self.grid.argmin[i], s)];
        let hi = self.u[(self.grid.argmax[i], s)];
        self.levels[j] * (hi - lo) + lo
    }

    /// `∂B(k, i·q + j) / ∂v_st`
    pub fn entry(&self, k: usize, i: usize, j: usize, s: usize, t: usize) -> f64 {
        if t != i || !self.is_active(k, i, j) {
            return 0.0;
        }
        self.u[(k, s)] - self.knot_derivative(i, j, s)
    }

    /// Full N × nq derivative of `B` with respect to `v_st`.
    pub fn dense(&self, s: usize, t: usize) -> DMatrix<f64> {
        let (n_rows, n) = self.x.shape();
        let q = self.grid.q();
        let mut d = DMatrix::zeros(n_rows, n * q);
        for j in 0..q {
            let dk = self.knot_derivative(t, j, s);
            for k in 0..n_rows {
                if self.is_active(k, t, j) {
                    d[(k, t * q + j)] = self.u[(k, s)] - dk;
                }
            }
        }
        d
    }
}

/// Analytic `∂B/∂V` for a uniform knot grid.
pub fn basis_derivative<'a>(
    u: &'a DMatrix<f64>,
    x: &'a DMatrix<f64>,
    grid: &'a BiasGrid,
) -> Result<BasisDerivative<'a>> {
    if grid.mode == BiasMode::Quantile {
        return Err(Error::QuantileDerivative);
    }
    if u.nrows() != x.nrows() || x.ncols() != grid.n() {
        return Err(Error::DimensionMismatch {
            context: "basis derivative inputs",
            expected: x.nrows(),
            actual: u.nrows(),
        });
    }
    Ok(BasisDerivative::new(u, x, grid, false))
}

/// Jacobian of the residual at an evaluated point.
pub fn jacobian_at(point: &VpPoint, ds: &RegressionDataset, mode: JacobianMode) -> DMatrix<f64> {
    let u = &ds.regressors;
    let (rows, m) = u.shape();
    let n = point.x.ncols();
    let q = point.grid.q();
    let deriv = BasisDerivative::new(u, &point.x, &point.grid, point.grid.mode == BiasMode::Quantile);
    let levels = &deriv.levels;
    let w = &point.w;
    let r = &point.residual;

    // D·w for every variable, using per-row sums of the active ramp weights:
    // (D_st w)(k) = (u_s(k) − u_s(kmin)) A_t(k) − Δ_s S_t(k)   (uniform grid)
    let mut dw = DMatrix::zeros(rows, m * n);
    // Dᵀ r, rows indexed like the columns of [1, B]
    let mut dtr = DMatrix::zeros(q * n + 1, m * n);
    for t in 0..n {
        let mut a_sum = vec![0.0; rows];
        let mut s_sum = vec![0.0; rows];
        for (k, (a, sw)) in a_sum.iter_mut().zip(s_sum.iter_mut()).enumerate() {
            for j in 0..q {
                if deriv.is_active(k, t, j) {
                    let wj = w[1 + t * q + j];
                    *a += wj;
                    *sw += wj * levels[j];
                }
            }
        }
        let (kmin, kmax) = (point.grid.argmin[t], point.grid.argmax[t]);
        for s in 0..m {
            let col = t * m + s;
            let (lo, delta) = if deriv.frozen_knots {
                (0.0, 0.0)
            } else {
                (u[(kmin, s)], u[(kmax, s)] - u[(kmin, s)])
            };
            for k in 0..rows {
                dw[(k, col)] = (u[(k, s)] - lo) * a_sum[k] - delta * s_sum[k];
            }
        }
        if mode == JacobianMode::Full {
            for j in 0..q {
                // Σ_k active r_k u_s(k) and Σ_k active r_k
                let mut ru = vec![0.0; m];
                let mut rsum = 0.0;
                for k in 0..rows {
                    if deriv.is_active(k, t, j) {
                        rsum += r[k];
                        for (s, acc) in ru.iter_mut().enumerate() {
                            *acc += r[k] * u[(k, s)];
                        }
                    }
                }
                for s in 0..m {
                    dtr[(1 + t * q + j, t * m + s)] = ru[s] - deriv.knot_derivative(t, j, s) * rsum;
                }
            }
        }
    }

    let mut jac = point.svd.project_out(&dw);
    if mode == JacobianMode::Full {
        jac += point.svd.pinv_transpose_apply(&dtr);
    }
    -jac
}

/// `∂r/∂vec(V)` (N × mn) at transform `v`.
pub fn vp_jacobian(v: &DMatrix<f64>, ds: &RegressionDataset, q: usize, mode: JacobianMode) -> Result<DMatrix<f64>> {
    let point = evaluate(v, ds, q, BiasMode::Uniform)?;
    basis_derivative(&ds.regressors, &point.x, &point.grid)?;
    Ok(jacobian_at(&point, ds, mode))
}

fn normalize_columns(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
}

fn lm_step(jtj: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let dmax = jtj.diagonal().max();
    let floor = 1e-12 * dmax.max(f64::MIN_POSITIVE);
    let mut a = jtj.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * jtj[(i, i)].max(floor);
    }
    let rhs = -g;
    match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => ThinSvd::new(&a, PINV_RTOL).solve(&rhs),
    }
}

fn split_holdout(ds: &RegressionDataset, cfg: &TrainConfig) -> (RegressionDataset, Option<RegressionDataset>) {
    let hold = (ds.len() as f64 * cfg.holdout_fraction).floor() as usize;
    if hold == 0 {
        return (ds.clone(), None);
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.rng_seed));
    let (h, t) = idx.split_at(hold);
    let mut h = h.to_vec();
    let mut t = t.to_vec();
    h.sort_unstable();
    t.sort_unstable();
    (ds.select_rows(&t), Some(ds.select_rows(&h)))
}

fn holdout_rmse(v: &DMatrix<f64>, p: &VpPoint, hold: &RegressionDataset) -> Result<f64> {
    let net = UReluNet::from_grid(v.clone(), &p.grid, p.w.clone())?;
    let pred = net.forward(&hold.regressors)?;
    Ok(((&hold.target - pred).norm_squared() / hold.len() as f64).sqrt())
}

/// Levenberg-Marquardt on the variable-projection functional.
///
/// A trial step solves `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr` and is accepted only if
/// it lowers `‖r‖²`; accepted transforms have their columns rescaled to unit
/// norm, which leaves the residual unchanged. The returned network carries
/// weights re-solved at the final transform and knots frozen from the
/// training rows.
pub fn train(
    v0: &DMatrix<f64>,
    dataset: &RegressionDataset,
    q: usize,
    config: &TrainConfig,
) -> Result<(UReluNet, TrainReport)> {
    config.validate()?;
    if v0.nrows() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial transform rows",
            expected: dataset.dim(),
            actual: v0.nrows(),
        });
    }
    let (ds, hold) = split_holdout(dataset, config);
    let (m, n) = v0.shape();
    let mode = config.bias_mode;

    let mut v = v0.clone();
    normalize_columns(&mut v);
    let mut point = evaluate(&v, &ds, q, mode)?;
    let mut cost = point.cost();
    if !cost.is_finite() {
        return Err(Error::NonFiniteResidual);
    }

    let mut history = vec![cost];
    let mut hold_hist = match &hold {
        Some(h) => Some(vec![holdout_rmse(&v, &point, h)?]),
        None => None,
    };
    let mut lambda = config.lm_lambda0;
    let mut accepted = 0;
    let mut rejected = 0;
    let mut iterations = 0;
    let mut status = TrainStatus::MaxIter;
    let mut normal: Option<(DMatrix<f64>, DVector<f64>)> = None;

    while iterations < config.max_iter {
        let (jtj, g) = normal.get_or_insert_with(|| {
            let j = jacobian_at(&point, &ds, config.jacobian_mode);
            (j.tr_mul(&j), j.tr_mul(&point.residual))
        });
        if g.amax() < config.grad_tol {
            status = TrainStatus::GradientTolerance;
            break;
        }
        if lambda > LAMBDA_MAX {
            status = TrainStatus::Stalled;
            break;
        }
        let delta = lm_step(jtj, g, lambda);
        if !(delta.norm() >= config.step_tol) {
            status = TrainStatus::StepTolerance;
            break;
        }
        iterations += 1;

        let mut trial_v = &v + DMatrix::from_column_slice(m, n, delta.as_slice());
        normalize_columns(&mut trial_v);
        let trial = evaluate(&trial_v, &ds, q, mode)?;
        let trial_cost = trial.cost();
        if trial_cost.is_finite() && trial_cost < cost {
            v = trial_v;
            point = trial;
            cost = trial_cost;
            history.push(cost);
            if let (Some(hh), Some(h)) = (hold_hist.as_mut(), hold.as_ref()) {
                hh.push(holdout_rmse(&v, &point, h)?);
            }
            lambda /= config.lm_down;
            accepted += 1;
            normal = None;
        } else {
            lambda *= config.lm_up;
            rejected += 1;
        }
    }

    let net = UReluNet::from_grid(v, &point.grid, point.w.clone())?.with_regressor_spec(dataset.spec);
    let final_rmse = (cost / ds.len() as f64).sqrt();
    let report = TrainReport {
        iterations,
        accepted,
        rejected,
        residual_history: history,
        final_rmse,
        final_rmse_db: rmse_db(final_rmse).ok(),
        status,
        final_lambda: lambda,
        weight_rank: point.svd.rank(),
        holdout_rmse: hold_hist,
    };
    Ok((net, report))
}
