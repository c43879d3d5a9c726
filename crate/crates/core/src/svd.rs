//! Truncated SVD.
//!
//! Dense inputs with `min(m, n) <= 2000` go through a full dense
//! SVD. Larger or sparse inputs use Golub–Kahan–Lanczos bidiagonalization with
//! full reorthogonalization and thick restarts, stopping once every requested
//! Ritz triple has residual below `LANCZOS_TOL * σ₁`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::MatrixHandle;
use crate::rng::Rng64;

pub const DENSE_SVD_MAX_DIM: usize = 2000;
pub const LANCZOS_TOL: f64 = 1e-10;
const SMALL_SPARSE_ENTRIES: usize = 1_000_000;
const MAX_RESTARTS: usize = 500;

/// Thin SVD factors `U diag(S) Vᵀ`, singular values nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.transpose()
    }

    /// `(U √S, V √S)`, the balanced two-factor split.
    pub fn balanced_factors(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut a = self.u.clone();
        let mut b = self.v.clone();
        for (j, &s) in self.s.iter().enumerate() {
            let r = s.max(0.0).sqrt();
            a.column_mut(j).scale_mut(r);
            b.column_mut(j).scale_mut(r);
        }
        (a, b)
    }

    /// Makes the largest-magnitude entry of every left singular vector nonnegative.
    fn fix_signs(&mut self) {
        for j in 0..self.s.len() {
            let col = self.u.column(j);
            let mut best = 0.0f64;
            for &x in col.iter() {
                if x.abs() > best.abs() {
                    best = x;
                }
            }
            if best < 0.0 {
                self.u.column_mut(j).neg_mut();
                self.v.column_mut(j).neg_mut();
            }
        }
    }
}

/// Backend selection for [`tsvd_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsvdMethod {
    Auto,
    Dense,
    Lanczos,
}

/// The `k` dominant singular triples of `x`.
pub fn tsvd(x: &MatrixHandle, k: usize) -> Result<SvdTriple> {
    tsvd_with(x, k, TsvdMethod::Auto)
}

pub fn tsvd_with(x: &MatrixHandle, k: usize, method: TsvdMethod) -> Result<SvdTriple> {
    let (m, n) = x.shape();
    let min_dim = m.min(n);
    if k == 0 || k > min_dim {
        return Err(Error::InvalidArgument(format!(
            "tsvd rank {k} outside 1..={min_dim}"
        )));
    }
    let use_dense = match method {
        TsvdMethod::Dense => true,
        TsvdMethod::Lanczos => false,
        TsvdMethod::Auto => match x {
            MatrixHandle::Dense(_) => min_dim <= DENSE_SVD_MAX_DIM,
            MatrixHandle::Sparse(_) => m * n <= SMALL_SPARSE_ENTRIES,
        },
    };
    let mut out = if use_dense {
        let full = dense_svd(&x.densify()?);
        SvdTriple {
            u: full.u.columns(0, k).into_owned(),
            s: full.s.rows(0, k).into_owned(),
            v: full.v.columns(0, k).into_owned(),
        }
    } else {
        lanczos_tsvd(x, k, LANCZOS_TOL)
    };
    out.fix_signs();
    Ok(out)
}

fn to_faer(x: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

/// All singular values of a dense matrix, nonincreasing.
pub fn singular_values(x: &DMatrix<f64>) -> DVector<f64> {
    let mut s = match to_faer(x).singular_values() {
        Ok(v) => DVector::from_vec(v),
        Err(_) => x.singular_values(),
    };
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

/// Thin SVD of a dense matrix with singular values sorted nonincreasing.
///
/// Computed by faer; nalgebra is used only for inputs faer rejects.
pub fn dense_svd(x: &DMatrix<f64>) -> SvdTriple {
    let (m, n) = x.shape();
    let k = m.min(n);
    if k == 0 {
        return SvdTriple {
            u: DMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        };
    }
    let (u, s, v) = match to_faer(x).thin_svd() {
        Ok(svd) => {
            let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
            (
                DMatrix::from_fn(m, k, |i, j| fu[(i, j)]),
                DVector::from_fn(k, |i, _| fs[i]),
                DMatrix::from_fn(n, k, |i, j| fv[(i, j)]),
            )
        }
        Err(_) => {
            let svd = x.clone().svd(true, true);
            let v_t = svd.v_t.expect("right vectors requested");
            (svd.u.expect("left vectors requested"), svd.singular_values, v_t.transpose())
        }
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut su = DMatrix::zeros(m, k);
    let mut sv = DMatrix::zeros(n, k);
    let mut ss = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        su.column_mut(dst).copy_from(&u.column(src));
        sv.column_mut(dst).copy_from(&v.column(src));
        ss[dst] = s[src];
    }
    SvdTriple { u: su, s: ss, v: sv }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two passes of classical Gram–Schmidt against `basis`; returns the accumulated coefficients.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut coeffs = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (c, b) in coeffs.iter_mut().zip(basis) {
            let d = dot(v, b);
            *c += d;
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
    coeffs
}

/// Unit vector orthogonal to `basis`, or `None` if the basis spans the space.
fn random_orthogonal(len: usize, basis: &[Vec<f64>], rng: &mut Rng64) -> Option<Vec<f64>> {
    if basis.len() >= len {
        return None;
    }
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..len).map(|_| rng.uniform() - 0.5).collect();
        orthogonalize(&mut v, basis);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

fn combine(basis: &[Vec<f64>], coeffs: nalgebra::DVectorView<f64>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (b, &c) in basis.iter().zip(coeffs.iter()) {
        if c != 0.0 {
            out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
        }
    }
    out
}

fn lanczos_tsvd(x: &MatrixHandle, k: usize, tol: f64) -> SvdTriple {
    let (m, n) = x.shape();
    let min_dim = m.min(n);
    let basis = min_dim.min((2 * k + 20).max(k + 30));
    let breakdown = 1e-14 * x.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut rng = Rng64::new(0x5eed_1a2c_a05);

    let mut q: Vec<Vec<f64>> = vec![random_orthogonal(n, &[], &mut rng).unwrap_or_else(|| vec![0.0; n])];
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut b = DMatrix::<f64>::zeros(basis, basis);
    let mut residual_norm = 0.0;
    let mut restarts = 0;

    loop {
        while p.len() < basis {
            let j = p.len();
            let mut w = vec![0.0; m];
            x.mul_vec(&q[j], &mut w);
            let c = orthogonalize(&mut w, &p);
            let mut alpha = norm(&w);
            if alpha <= breakdown {
                alpha = 0.0;
                w = random_orthogonal(m, &p, &mut rng).unwrap_or_else(|| vec![0.0; m]);
            } else {
                w.iter_mut().for_each(|v| *v /= alpha);
            }
            for (i, ci) in c.iter().enumerate() {
                b[(i, j)] = *ci;
            }
            b[(j, j)] = alpha;
            p.push(w);

            let mut z = vec![0.0; n];
            x.tr_mul_vec(&p[j], &mut z);
            orthogonalize(&mut z, &q);
            let beta = norm(&z);
            if beta <= breakdown {
                residual_norm = 0.0;
                z = random_orthogonal(n, &q, &mut rng).unwrap_or_else(|| vec![0.0; n]);
            } else {
                residual_norm = beta;
                z.iter_mut().for_each(|v| *v /= beta);
            }
            q.push(z);
        }

        let size = p.len();
        let small = dense_svd(&b.view((0, 0), (size, size)).into_owned());
        let sigma1 = small.s[0].max(f64::MIN_POSITIVE);
        let converged = (0..k).all(|i| (residual_norm * small.u[(size - 1, i)]).abs() <= tol * sigma1);
        if converged || size >= min_dim || restarts >= MAX_RESTARTS {
            let u_cols: Vec<DVector<f64>> = (0..k)
                .map(|i| DVector::from_vec(combine(&p, small.u.column(i), m)))
                .collect();
            let v_cols: Vec<DVector<f64>> = (0..k)
                .map(|i| DVector::from_vec(combine(&q[..size], small.v.column(i), n)))
                .collect();
            return SvdTriple {
                u: DMatrix::from_columns(&u_cols),
                s: small.s.rows(0, k).into_owned(),
                v: DMatrix::from_columns(&v_cols),
            };
        }

        // thick restart: keep the leading Ritz vectors plus the residual direction
        let keep = k + (size - k) / 2;
        let new_p: Vec<Vec<f64>> = (0..keep).map(|i| combine(&p, small.u.column(i), m)).collect();
        let mut new_q: Vec<Vec<f64>> = (0..keep)
            .map(|i| combine(&q[..size], small.v.column(i), n))
            .collect();
        new_q.push(q[size].clone());
        p = new_p;
        q = new_q;
        b.fill(0.0);
        for i in 0..keep {
            b[(i, i)] = small.s[i];
        }
        restarts += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::CsrMatrix;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = Rng64::new(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.uniform() - 0.5)
    }

    fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
        (u.tr_mul(u) - DMatrix::identity(u.ncols(), u.ncols())).norm()
    }

    #[test]
    fn diagonal_case() {
        let x = MatrixHandle::Dense(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0])));
        let t = tsvd(&x, 2).unwrap();
        assert!((t.s[0] - 3.0).abs() < 1e-14 && (t.s[1] - 2.0).abs() < 1e-14);
        let err = (x.to_dense() - t.reconstruct()).norm();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_is_reconstructed() {
        let u = DVector::from_fn(6, |i, _| i as f64 + 1.0);
        let v = DVector::from_fn(4, |i, _| 1.0 - 0.3 * i as f64);
        let x = &u * v.transpose();
        let t = tsvd(&MatrixHandle::Dense(x.clone()), 1).unwrap();
        assert!((t.reconstruct() - &x).norm() <= 1e-12 * x.norm());
    }

    #[test]
    fn dense_triples_satisfy_invariants() {
        let x = random(20, 15, 9);
        let t = tsvd(&MatrixHandle::Dense(x.clone()), 5).unwrap();
        assert!(orthonormality_defect(&t.u) <= 1e-10 * 5.0);
        assert!(orthonormality_defect(&t.v) <= 1e-10 * 5.0);
        assert!(t.s.iter().zip(t.s.iter().skip(1)).all(|(a, b)| a >= b));
        let full = singular_values(&x);
        for i in 0..5 {
            assert!((t.s[i] - full[i]).abs() < 1e-10);
        }
        // sign convention
        for j in 0..5 {
            let col = t.u.column(j);
            let max = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(max >= 0.0);
        }
    }

    #[test]
    fn rank_out_of_range_is_rejected() {
        let x = MatrixHandle::Dense(random(4, 3, 1));
        assert!(tsvd(&x, 0).is_err());
        assert!(tsvd(&x, 4).is_err());
    }

    #[test]
    fn lanczos_matches_dense_on_dense_input() {
        let x = random(120, 90, 4);
        let h = MatrixHandle::Dense(x.clone());
        let a = tsvd_with(&h, 8, TsvdMethod::Lanczos).unwrap();
        let d = tsvd_with(&h, 8, TsvdMethod::Dense).unwrap();
        for i in 0..8 {
            assert!((a.s[i] - d.s[i]).abs() <= 1e-9 * d.s[0], "{i}: {} vs {}", a.s[i], d.s[i]);
        }
        assert!(orthonormality_defect(&a.u) < 1e-10 && orthonormality_defect(&a.v) < 1e-10);
        assert!((a.reconstruct() - d.reconstruct()).norm() <= 1e-8 * x.norm());
    }

    #[test]
    fn lanczos_handles_sparse_rank_deficient_input() {
        // rank-3 sparse matrix: Krylov space breaks down early
        let mut trip = Vec::new();
        for i in 0..200 {
            trip.push((i, i % 3, 1.0 + i as f64 * 0.01));
        }
        let s = CsrMatrix::from_triplets(200, 50, trip).unwrap();
        let h = MatrixHandle::Sparse(s.clone());
        let a = tsvd_with(&h, 5, TsvdMethod::Lanczos).unwrap();
        let full = singular_values(&s.to_dense());
        for i in 0..5 {
            assert!((a.s[i] - full[i]).abs() <= 1e-9 * full[0]);
        }
    }

    #[test]
    fn lanczos_with_restarts_on_flat_spectrum() {
        let x = random(300, 260, 12);
        let h = MatrixHandle::Dense(x.clone());
        let a = tsvd_with(&h, 20, TsvdMethod::Lanczos).unwrap();
        let full = singular_values(&x);
        for i in 0..20 {
            assert!((a.s[i] - full[i]).abs() <= 1e-8 * full[0]);
        }
    }
}
