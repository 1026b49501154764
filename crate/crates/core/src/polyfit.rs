//! Polynomial NARX models: candidate enumeration, forward regression with
//! orthogonal least squares (FROLS) and evaluation.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Predictor, RegressionDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, lstsq};

/// Default upper bound on the candidate dictionary size.
pub const DEFAULT_TERM_CAP: usize = 250_000;

/// A candidate column whose orthogonal remainder falls below this fraction
/// of its squared norm is treated as linearly dependent.
const DEGENERATE_RTOL: f64 = 1e-10;

/// Monomial `Π u_i^{e_i}`; the all-zero exponent vector is the constant term.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyTerm {
    exponents: Vec<u32>,
}

impl PolyTerm {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn constant(m: usize) -> Self {
        Self {
            exponents: vec![0; m],
        }
    }

    /// Single variable `u_index` raised to `power`.
    pub fn var(m: usize, index: usize, power: u32) -> Self {
        let mut exponents = vec![0; m];
        exponents[index] = power;
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// Non-zero `(index, exponent)` pairs.
    pub fn factors(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.exponents
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| (i, e))
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.factors().map(|(i, e)| u[i].powi(e as i32)).product()
    }

    /// Evaluates the monomial on every row of `u`.
    pub fn column(&self, u: &DMatrix<f64>) -> Vec<f64> {
        let mut col = vec![1.0; u.nrows()];
        for (i, e) in self.factors() {
            for (c, x) in col.iter_mut().zip(u.column(i).iter()) {
                *c *= x.powi(e as i32);
            }
        }
        col
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// All monomials in `m` variables of total degree `≤ max_degree`, in graded
/// lexicographic order (constant first, then `u1, u2, …`, then `u1², u1u2, …`).
pub fn enumerate_terms(m: usize, max_degree: u32) -> Result<Vec<PolyTerm>> {
    enumerate_terms_capped(m, max_degree, DEFAULT_TERM_CAP)
}

pub fn enumerate_terms_capped(m: usize, max_degree: u32, cap: usize) -> Result<Vec<PolyTerm>> {
    if m == 0 || max_degree == 0 {
        return Err(Error::invalid("enumerate_terms needs m >= 1 and max_degree >= 1"));
    }
    let count = binomial(m as u128 + max_degree as u128, max_degree as u128);
    if count > cap as u128 {
        return Err(Error::TooManyTerms { count, cap });
    }
    let mut terms = Vec::with_capacity(count as usize);
    for degree in 0..=max_degree as usize {
        // nondecreasing index tuples i_1 <= … <= i_d in lexicographic order
        let mut idx = vec![0usize; degree];
        loop {
            let mut exponents = vec![0u32; m];
            for &i in &idx {
                exponents[i] += 1;
            }
            terms.push(PolyTerm { exponents });
            let Some(pos) = (0..degree).rev().find(|&p| idx[p] + 1 < m) else {
                break;
            };
            let next = idx[pos] + 1;
            for slot in &mut idx[pos..] {
                *slot = next;
            }
        }
    }
    debug_assert_eq!(terms.len() as u128, count);
    Ok(terms)
}

/// Polynomial NARX model `ŷ(u) = Σ_k c_k · term_k(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolyModel")]
pub struct PolyNarxModel {
    m: usize,
    terms: Vec<PolyTerm>,
    coeffs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPolyModel {
    m: usize,
    terms: Vec<PolyTerm>,
    coeffs: Vec<f64>,
}

impl TryFrom<RawPolyModel> for PolyNarxModel {
    type Error = Error;

    fn try_from(raw: RawPolyModel) -> Result<Self> {
        PolyNarxModel::new(raw.m, raw.terms, raw.coeffs)
    }
}

impl PolyNarxModel {
    pub fn new(m: usize, terms: Vec<PolyTerm>, coeffs: Vec<f64>) -> Result<Self> {
        if terms.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                context: "polynomial coefficients",
                expected: terms.len(),
                actual: coeffs.len(),
            });
        }
        if let Some(t) = terms.iter().find(|t| t.dim() != m) {
            return Err(Error::DimensionMismatch {
                context: "polynomial term dimension",
                expected: m,
                actual: t.dim(),
            });
        }
        let mut seen = HashSet::new();
        if !terms.iter().all(|t| seen.insert(t)) {
            return Err(Error::invalid("polynomial terms must be distinct"));
        }
        Ok(Self { m, terms, coeffs })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PolyTerm, f64)> {
        self.terms.iter().zip(self.coeffs.iter().copied())
    }

    /// Ordinary least-squares fit of the given terms (no selection).
    pub fn fit_ols(dataset: &RegressionDataset, terms: Vec<PolyTerm>) -> Result<Self> {
        let m = dataset.dim();
        let columns: Vec<Vec<f64>> = terms.iter().map(|t| t.column(&dataset.regressors)).collect();
        let coeffs = refit(&columns, &dataset.target);
        Self::new(m, terms, coeffs)
    }

    fn eval_unchecked(&self, u: &[f64]) -> f64 {
        self.iter().map(|(t, c)| c * t.eval(u)).sum()
    }
}

impl Predictor for PolyNarxModel {
    fn predict(&self, phi: &[f64]) -> f64 {
        self.eval_unchecked(phi)
    }
}

pub fn poly_eval(model: &PolyNarxModel, u: &[f64]) -> Result<f64> {
    if u.len() != model.m {
        return Err(Error::DimensionMismatch {
            context: "poly_eval input",
            expected: model.m,
            actual: u.len(),
        });
    }
    Ok(model.eval_unchecked(u))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrolsConfig {
    pub max_terms: usize,
    pub esr_tol: f64,
}

impl Default for FrolsConfig {
    fn default() -> Self {
        Self {
            max_terms: 50,
            esr_tol: 1e-6,
        }
    }
}

/// Selected model plus the error reduction ratio of each selected term
/// (in selection order, matching the model's term order).
#[derive(Clone, Debug)]
pub struct FrolsFit {
    pub model: PolyNarxModel,
    pub err: Vec<f64>,
    pub skipped: usize,
}

impl FrolsFit {
    pub fn err_sum(&self) -> f64 {
        self.err.iter().sum()
    }
}

struct Candidate {
    scale: f64,
    // normalized column · y
    py: f64,
    // normalized column · q_k for every selected orthonormal q_k
    proj: Vec<f64>,
    alive: bool,
}

/// Greedy term selection by error reduction ratio.
///
/// Candidate columns are scaled to unit RMS. Each round scores every live
/// candidate against the span of the already selected columns, picks the
/// best, orthogonalizes it by classical Gram-Schmidt applied twice, and
/// stops once the ERR sum reaches `1 − esr_tol` or `max_terms` are chosen.
/// Final coefficients come from a least-squares refit on the selected columns.
pub fn frols_select(
    dataset: &RegressionDataset,
    candidates: &[PolyTerm],
    config: &FrolsConfig,
) -> Result<FrolsFit> {
    let u = &dataset.regressors;
    let y = dataset.target.as_slice();
    let (n, m) = u.shape();
    if config.max_terms == 0 {
        return Err(Error::invalid("max_terms must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("candidate list is empty"));
    }
    if n <= config.max_terms {
        return Err(Error::invalid(format!(
            "need more samples ({n}) than max_terms ({})",
            config.max_terms
        )));
    }
    if let Some(t) = candidates.iter().find(|t| t.dim() != m) {
        return Err(Error::DimensionMismatch {
            context: "candidate term dimension",
            expected: m,
            actual: t.dim(),
        });
    }

    let yy = dot(y, y);
    if yy == 0.0 {
        return Ok(FrolsFit {
            model: PolyNarxModel::new(m, Vec::new(), Vec::new())?,
            err: Vec::new(),
            skipped: 0,
        });
    }
    let nf = n as f64;

    let mut cands: Vec<Candidate> = candidates
        .par_iter()
        .map(|t| {
            let col = t.column(u);
            let sq = dot(&col, &col);
            let scale = (sq / nf).sqrt();
            if sq > 0.0 && sq.is_finite() {
                Candidate {
                    scale,
                    py: dot(&col, y) / scale,
                    proj: Vec::new(),
                    alive: true,
                }
            } else {
                Candidate {
                    scale: 1.0,
                    py: 0.0,
                    proj: Vec::new(),
                    alive: false,
                }
            }
        })
        .collect();
    let mut skipped = cands.iter().filter(|c| !c.alive).count();
    if skipped > 0 {
        log::warn!("frols: {skipped} candidate columns are identically zero");
    }

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut qy: Vec<f64> = Vec::new();
    let mut selected: Vec<usize> = Vec::new();
    let mut err = Vec::new();
    let mut err_sum = 0.0;

    while selected.len() < config.max_terms {
        let best = cands
            .iter()
            .enumerate()
            .filter(|(_, c)| c.alive)
            .filter_map(|(idx, c)| {
                let resid = nf - c.proj.iter().map(|p| p * p).sum::<f64>();
                if resid <= DEGENERATE_RTOL * nf {
                    return None;
                }
                let num = c.py - dot(&c.proj, &qy);
                Some((idx, num * num / (resid * yy)))
            })
            .fold(None, |acc: Option<(usize, f64)>, (idx, score)| match acc {
                Some((_, s)) if s >= score => acc,
                _ => Some((idx, score)),
            });
        let Some((pick, _)) = best else {
            break;
        };

        let cand = &cands[pick];
        let mut w: Vec<f64> = candidates[pick]
            .column(u)
            .into_iter()
            .map(|v| v / cand.scale)
            .collect();
        for _pass in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let norm_sq = dot(&w, &w);
        if norm_sq <= DEGENERATE_RTOL * nf {
            log::warn!("frols: candidate {pick} degenerate after orthogonalization, skipped");
            cands[pick].alive = false;
            skipped += 1;
            continue;
        }
        let norm = norm_sq.sqrt();
        w.iter_mut().for_each(|v| *v /= norm);
        let q = w;
        let q_dot_y = dot(&q, y);
        let e = q_dot_y * q_dot_y / yy;

        cands[pick].alive = false;
        selected.push(pick);
        err.push(e);
        err_sum += e;
        qy.push(q_dot_y);

        if err_sum >= 1.0 - config.esr_tol || selected.len() == config.max_terms {
            basis.push(q);
            break;
        }
        cands
            .par_iter_mut()
            .zip(candidates.par_iter())
            .filter(|(c, _)| c.alive)
            .for_each(|(c, t)| {
                let col = t.column(u);
                c.proj.push(dot(&col, &q) / c.scale);
            });
        basis.push(q);
    }

    if selected.is_empty() {
        return Err(Error::DegenerateCandidates);
    }

    let columns: Vec<Vec<f64>> = selected.iter().map(|&i| candidates[i].column(u)).collect();
    let coeffs = refit(&columns, &dataset.target);
    let terms = selected.iter().map(|&i| candidates[i].clone()).collect();
    Ok(FrolsFit {
        model: PolyNarxModel::new(m, terms, coeffs)?,
        err,
        skipped,
    })
}

/// Least squares on RMS-normalized columns, mapped back to raw scale.
fn refit(columns: &[Vec<f64>], y: &DVector<f64>) -> Vec<f64> {
    let n = y.len();
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| {
            let s = (dot(c, c) / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let a = DMatrix::from_fn(n, columns.len(), |r, k| columns[k][r] / scales[k]);
    let c = lstsq(&a, y);
    c.iter().zip(&scales).map(|(ci, s)| ci / s).collect()
}
