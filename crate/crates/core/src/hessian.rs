//! Analytic Hessians of polynomial models and their stacking into a
//! third-order tensor.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::polyfit::PolyNarxModel;

/// Dense I × J × K tensor stored as K column-major frontal slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(i: usize, j: usize, k: usize) -> Self {
        Self {
            dims: [i, j, k],
            data: vec![0.0; i * j * k],
        }
    }

    /// Builds a tensor from equally sized frontal slices.
    pub fn from_slices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::invalid("tensor needs at least one slice"));
        };
        let (i, j) = first.shape();
        let mut data = Vec::with_capacity(i * j * slices.len());
        for s in slices {
            if s.shape() != (i, j) {
                return Err(Error::DimensionMismatch {
                    context: "tensor slice shape",
                    expected: i * j,
                    actual: s.len(),
                });
            }
            data.extend_from_slice(s.as_slice());
        }
        Ok(Self {
            dims: [i, j, slices.len()],
            data,
        })
    }

    /// `Σ_r A(:,r) ⊗ B(:,r) ⊗ C(:,r)`.
    pub fn from_factors(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let r = a.ncols();
        if b.ncols() != r || c.ncols() != r {
            return Err(Error::DimensionMismatch {
                context: "CP factor rank",
                expected: r,
                actual: b.ncols().min(c.ncols()),
            });
        }
        let slices: Vec<DMatrix<f64>> = (0..c.nrows())
            .map(|k| {
                let mut s = DMatrix::zeros(a.nrows(), b.nrows());
                for l in 0..r {
                    s += c[(k, l)] * a.column(l) * b.column(l).transpose();
                }
                s
            })
            .collect();
        Self::from_slices(&slices)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn slice(&self, k: usize) -> nalgebra::DMatrixView<'_, f64> {
        let [i, j, _] = self.dims;
        nalgebra::DMatrixView::from_slice(&self.data[k * i * j..(k + 1) * i * j], i, j)
    }

    pub fn slice_data(&self, k: usize) -> &[f64] {
        let [i, j, _] = self.dims;
        &self.data[k * i * j..(k + 1) * i * j]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let [di, dj, _] = self.dims;
        self.data[k * di * dj + j * di + i]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Reorders frontal slices: new slice `k` is old slice `perm[k]`.
    pub fn permute_slices(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &k in perm {
            data.extend_from_slice(self.slice_data(k));
        }
        Self {
            dims: [self.dims[0], self.dims[1], perm.len()],
            data,
        }
    }

    /// Writes `I J K` as little-endian u64 followed by the entries as
    /// little-endian f64, row-major over `(i, j, k)`.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for d in self.dims {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        let [di, dj, dk] = self.dims;
        for i in 0..di {
            for j in 0..dj {
                for k in 0..dk {
                    w.write_all(&self.get(i, j, k).to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

/// m × m × N stack of polynomial Hessians, one slice per operating point.
#[derive(Clone, Debug)]
pub struct HessianTensor {
    pub tensor: Tensor3,
    pub points: DMatrix<f64>,
}

impl HessianTensor {
    pub fn m(&self) -> usize {
        self.tensor.dims[0]
    }

    pub fn n_points(&self) -> usize {
        self.tensor.dims[2]
    }
}

fn add_term_hessian(exps: &[(usize, u32)], coeff: f64, u: &[f64], out: &mut [f64], m: usize) {
    // value of Π u_c^{e_c} with exponents of a and b lowered by the given amounts
    let partial = |a: usize, da: u32, b: usize, db: u32| -> f64 {
        let mut v = 1.0;
        for &(c, e) in exps {
            let mut e = e;
            if c == a {
                e -= da;
            }
            if c == b {
                e -= db;
            }
            v *= u[c].powi(e as i32);
        }
        v
    };
    for (ia, &(a, ea)) in exps.iter().enumerate() {
        if ea >= 2 {
            let h = coeff * (ea * (ea - 1)) as f64 * partial(a, 2, usize::MAX, 0);
            out[a * m + a] += h;
        }
        for &(b, eb) in &exps[ia + 1..] {
            let h = coeff * (ea * eb) as f64 * partial(a, 1, b, 1);
            out[a * m + b] += h;
            out[b * m + a] += h;
        }
    }
}

fn hessian_into(model: &PolyNarxModel, u: &[f64], out: &mut [f64]) {
    let m = model.m();
    for (term, coeff) in model.iter() {
        if term.degree() < 2 {
            continue;
        }
        let exps: Vec<(usize, u32)> = term.factors().collect();
        add_term_hessian(&exps, coeff, u, out, m);
    }
}

/// `∂²ŷ/∂u²` at `u`, differentiated exactly monomial by monomial.
pub fn poly_hessian_at(model: &PolyNarxModel, u: &[f64]) -> Result<DMatrix<f64>> {
    let m = model.m();
    if u.len() != m {
        return Err(Error::DimensionMismatch {
            context: "hessian point",
            expected: m,
            actual: u.len(),
        });
    }
    let mut h = DMatrix::zeros(m, m);
    hessian_into(model, u, h.as_mut_slice());
    Ok(h)
}

/// Evaluates the Hessian at every row of `points` and stacks the results
/// along the third mode.
pub fn stack_hessians(model: &PolyNarxModel, points: &DMatrix<f64>) -> Result<HessianTensor> {
    let m = model.m();
    let (n, cols) = points.shape();
    if cols != m {
        return Err(Error::DimensionMismatch {
            context: "hessian operating points",
            expected: m,
            actual: cols,
        });
    }
    if n == 0 {
        return Err(Error::invalid("need at least one operating point"));
    }
    let mut data = vec![0.0; m * m * n];
    data.par_chunks_mut(m * m).enumerate().for_each(|(k, out)| {
        let row: Vec<f64> = points.row(k).iter().copied().collect();
        hessian_into(model, &row, out);
    });
    Ok(HessianTensor {
        tensor: Tensor3 {
            dims: [m, m, n],
            data,
        },
        points: points.clone(),
    })
}

/// Indices of `k` rows spread uniformly over `0..n` (all rows when `k >= n`).
pub fn uniform_subsample(n: usize, k: usize) -> Vec<usize> {
    if k >= n || n == 0 {
        return (0..n).collect();
    }
    if k <= 1 {
        return vec![0];
    }
    (0..k)
        .map(|i| ((i as f64) * (n - 1) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyfit::{enumerate_terms, poly_eval, PolyTerm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cubic(rng: &mut ChaCha8Rng, m: usize) -> PolyNarxModel {
        let terms = enumerate_terms(m, 3).unwrap();
        let coeffs = terms.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        PolyNarxModel::new(m, terms, coeffs).unwrap()
    }

    #[test]
    fn bilinear_and_cubic_examples() {
        let m = PolyNarxModel::new(2, vec![PolyTerm::new(vec![1, 1])], vec![1.0]).unwrap();
        let h = poly_hessian_at(&m, &[0.3, -7.0]).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let m = PolyNarxModel::new(1, vec![PolyTerm::new(vec![3])], vec![1.0]).unwrap();
        assert_eq!(poly_hessian_at(&m, &[2.0]).unwrap()[(0, 0)], 12.0);
        assert!(poly_hessian_at(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = 4;
        let model = random_cubic(&mut rng, m);
        let step = 1e-5;
        for _ in 0..5 {
            let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = poly_hessian_at(&model, &u).unwrap();
            let f = |du: &[(usize, f64)]| {
                let mut p = u.clone();
                for &(i, d) in du {
                    p[i] += d;
                }
                poly_eval(&model, &p).unwrap()
            };
            // Four-point stencil on a cubic has no truncation error; what is
            // left is rounding of order eps·|f|/step², so compare per slice.
            let scale = h.amax().max(1.0);
            for a in 0..m {
                for b in 0..m {
                    let fd = (f(&[(a, step), (b, step)]) - f(&[(a, step), (b, -step)])
                        - f(&[(a, -step), (b, step)])
                        + f(&[(a, -step), (b, -step)]))
                        / (4.0 * step * step);
                    assert!((fd - h[(a, b)]).abs() <= 1e-6 * scale, "{a},{b}: {fd} vs {}", h[(a, b)]);
                }
            }
        }
    }

    #[test]
    fn stacked_slices_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_cubic(&mut rng, 3);
        let pts = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let t = stack_hessians(&model, &pts).unwrap();
        assert_eq!(t.tensor.dims(), [3, 3, 6]);
        for k in 0..6 {
            let row: Vec<f64> = pts.row(k).iter().copied().collect();
            let h = poly_hessian_at(&model, &row).unwrap();
            assert_eq!(t.tensor.slice(k), h);
            assert!((&h - h.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn constant_and_quadratic_models() {
        let pts = DMatrix::from_fn(5, 2, |r, c| (r + 2 * c) as f64 * 0.1);
        let c = PolyNarxModel::new(2, vec![PolyTerm::constant(2), PolyTerm::var(2, 0, 1)], vec![3.0, 1.0]).unwrap();
        assert_eq!(stack_hessians(&c, &pts).unwrap().tensor.norm(), 0.0);
        let q = PolyNarxModel::new(
            2,
            vec![PolyTerm::new(vec![2, 0]), PolyTerm::new(vec![1, 1])],
            vec![1.5, -2.0],
        )
        .unwrap();
        let t = stack_hessians(&q, &pts).unwrap().tensor;
        for k in 1..5 {
            assert_eq!(t.slice(k), t.slice(0));
        }
    }

    #[test]
    fn linearity_in_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cubic(&mut rng, 3);
        let b = random_cubic(&mut rng, 3);
        let sum_coeffs: Vec<f64> = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x + y).collect();
        let s = PolyNarxModel::new(3, a.terms().to_vec(), sum_coeffs).unwrap();
        let u = [0.2, -0.4, 0.9];
        let lhs = poly_hessian_at(&s, &u).unwrap();
        let rhs = poly_hessian_at(&a, &u).unwrap() + poly_hessian_at(&b, &u).unwrap();
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn subsample_indices() {
        assert_eq!(uniform_subsample(10, 3), vec![0, 5, 9]);
        assert_eq!(uniform_subsample(4, 10), vec![0, 1, 2, 3]);
    }

    #[test]
    fn binary_dump_layout() {
        let t = Tensor3::from_slices(&[DMatrix::from_row_slice(1, 2, &[1.0, 2.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        t.write_binary(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 3 * 8 + 2 * 8);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 2.0);
    }
}
