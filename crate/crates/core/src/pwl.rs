//! Linear subregions of a trained network.
//!
//! Dimension `i` is split at its knots into an unbounded cell `k = 0` below
//! `β_i1` and `q` bounded cells `[β_ik, β_i,k+1)`, the last one closed at the
//! training maximum `x_max,i`. Inside a cell the network is exactly affine.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, singular_values};
use crate::urelu::UReluNet;

pub const DEFAULT_REGION_LIMIT: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineX {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineU {
    pub c: Vec<f64>,
    pub b: f64,
}

/// `normal · u ≤ offset`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwlRegion {
    pub cell: Vec<usize>,
    /// `[lo, hi]` per dimension; `lo` is `-inf` in the extrapolation cell.
    pub x_bounds: Vec<[f64; 2]>,
    pub affine_x: AffineX,
    pub affine_u: AffineU,
    /// Dimensions whose interval has zero width.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<usize>,
}

impl PwlRegion {
    pub fn eval_x(&self, x: &[f64]) -> f64 {
        dot(&self.affine_x.a, x) + self.affine_x.b
    }

    pub fn eval_u(&self, u: &[f64]) -> f64 {
        dot(&self.affine_u.c, u) + self.affine_u.b
    }

    pub fn contains_x(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.x_bounds)
            .all(|(&xi, &[lo, hi])| xi >= lo && xi <= hi)
    }

    /// Cell bounds as constraints in regressor space, two per finite bound.
    pub fn half_spaces(&self, net: &UReluNet) -> Vec<HalfSpace> {
        let v = net.v();
        let mut out = Vec::with_capacity(2 * self.cell.len());
        for (i, &[lo, hi]) in self.x_bounds.iter().enumerate() {
            let col: Vec<f64> = v.column(i).iter().copied().collect();
            if lo.is_finite() {
                out.push(HalfSpace {
                    normal: col.iter().map(|c| -c).collect(),
                    offset: -lo,
                });
            }
            if hi.is_finite() {
                out.push(HalfSpace { normal: col, offset: hi });
            }
        }
        out
    }
}

/// Interval index per dimension: the number of knots `≤ x_i`.
pub fn region_of(net: &UReluNet, x: &[f64]) -> Result<Vec<usize>> {
    if x.len() != net.n() {
        return Err(Error::DimensionMismatch {
            context: "region_of point",
            expected: net.n(),
            actual: x.len(),
        });
    }
    let beta = net.beta();
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi)| (0..net.q()).take_while(|&j| beta[(i, j)] <= xi).count())
        .collect())
}

pub fn affine_in_region(net: &UReluNet, cell: &[usize]) -> Result<PwlRegion> {
    let (n, q) = (net.n(), net.q());
    if cell.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cell length",
            expected: n,
            actual: cell.len(),
        });
    }
    if let Some(&k) = cell.iter().find(|&&k| k > q) {
        return Err(Error::invalid(format!("cell index {k} exceeds q = {q}")));
    }
    let beta = net.beta();
    let mut a = vec![0.0; n];
    let mut b = net.w()[0];
    let mut bounds = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for (i, &k) in cell.iter().enumerate() {
        for j in 0..k {
            let wij = net.ramp_weight(i, j);
            a[i] += wij;
            b -= wij * beta[(i, j)];
        }
        let lo = if k == 0 { f64::NEG_INFINITY } else { beta[(i, k - 1)] };
        let hi = if k < q { beta[(i, k)] } else { net.x_max()[i].max(lo) };
        if lo == hi {
            degenerate.push(i);
        }
        bounds.push([lo, hi]);
    }
    let c = (net.v() * DVector::from_column_slice(&a)).as_slice().to_vec();
    Ok(PwlRegion {
        cell: cell.to_vec(),
        x_bounds: bounds,
        affine_x: AffineX { a, b },
        affine_u: AffineU { c, b },
        degenerate,
    })
}

/// Lazy enumeration of the bounded cells in lexicographic order.
pub struct RegionIter<'a> {
    net: &'a UReluNet,
    next: Option<Vec<usize>>,
    limit: usize,
    emitted: usize,
    truncated: bool,
}

impl RegionIter<'_> {
    /// `q^n`, saturating.
    pub fn total_cells(&self) -> u128 {
        total_cells(self.net.n(), self.net.q())
    }

    /// True once the limit stopped the stream before the last cell.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }
}

pub fn total_cells(n: usize, q: usize) -> u128 {
    (0..n).fold(1u128, |acc, _| acc.saturating_mul(q as u128))
}

impl Iterator for RegionIter<'_> {
    type Item = PwlRegion;

    fn next(&mut self) -> Option<PwlRegion> {
        let cell = self.next.take()?;
        if self.emitted >= self.limit {
            self.truncated = true;
            return None;
        }
        let q = self.net.q();
        let mut succ = cell.clone();
        let mut carry = true;
        for k in succ.iter_mut().rev() {
            if *k < q {
                *k += 1;
                carry = false;
                break;
            }
            *k = 1;
        }
        if !carry {
            self.next = Some(succ);
        }
        self.emitted += 1;
        affine_in_region(self.net, &cell).ok()
    }
}

pub fn enumerate_regions(net: &UReluNet, limit: usize) -> RegionIter<'_> {
    RegionIter {
        net,
        next: Some(vec![1; net.n()]),
        limit,
        emitted: 0,
        truncated: false,
    }
}

/// 2-norm condition number; `+inf` when numerically rank deficient.
pub fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid("condition number of an empty matrix"));
    }
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    if a.ncols() > a.nrows() {
        return Ok(f64::INFINITY);
    }
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * smax;
    Ok(if smin <= tol { f64::INFINITY } else { smax / smin })
}

/// `(cond(U), cond(X))`
pub fn cond_diagnostics(u: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<(f64, f64)> {
    Ok((condition_number(u)?, condition_number(x)?))
}
