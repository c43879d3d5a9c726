//! The factor quadruple of a rank-`r` Hadamard decomposition.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grad::{gram_face_split, CHUNK_ROWS};
use crate::manifold::FaceSplitPoint;
use crate::matrix::MatrixHandle;

/// `X ≈ (W1 H1ᵀ) ∘ (W2 H2ᵀ)` with `W1, W2` of size `m x r` and `H1, H2` of size `n x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct HadamardFactors {
    pub w1: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub h2: DMatrix<f64>,
}

impl HadamardFactors {
    pub fn new(
        w1: DMatrix<f64>,
        h1: DMatrix<f64>,
        w2: DMatrix<f64>,
        h2: DMatrix<f64>,
    ) -> Result<Self> {
        let r = w1.ncols();
        if r == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if w2.shape() != w1.shape()
            || h1.ncols() != r
            || h2.shape() != h1.shape()
        {
            return Err(Error::dims(
                "HadamardFactors",
                format!(
                    "W1 {:?}, H1 {:?}, W2 {:?}, H2 {:?}",
                    w1.shape(),
                    h1.shape(),
                    w2.shape(),
                    h2.shape()
                ),
            ));
        }
        Ok(HadamardFactors { w1, h1, w2, h2 })
    }

    pub fn rows(&self) -> usize {
        self.w1.nrows()
    }

    pub fn cols(&self) -> usize {
        self.h1.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w1.ncols()
    }

    /// `W1 H1ᵀ`.
    pub fn x1(&self) -> DMatrix<f64> {
        &self.w1 * self.h1.transpose()
    }

    /// `W2 H2ᵀ`.
    pub fn x2(&self) -> DMatrix<f64> {
        &self.w2 * self.h2.transpose()
    }

    /// The dense approximation `(W1 H1ᵀ) ∘ (W2 H2ᵀ)`.
    pub fn assemble(&self) -> DMatrix<f64> {
        self.x1().component_mul(&self.x2())
    }

    pub fn w_point(&self) -> FaceSplitPoint {
        FaceSplitPoint::new(self.w1.clone(), self.w2.clone()).expect("shapes checked")
    }

    pub fn h_point(&self) -> FaceSplitPoint {
        FaceSplitPoint::new(self.h1.clone(), self.h2.clone()).expect("shapes checked")
    }

    /// Factors of `Xᵀ`: the roles of `W` and `H` are exchanged.
    pub fn transposed(&self) -> Self {
        HadamardFactors {
            w1: self.h1.clone(),
            h1: self.w1.clone(),
            w2: self.h2.clone(),
            h2: self.w2.clone(),
        }
    }

    /// Multiplies the represented matrix by `c`, spreading `|c|^{1/4}` over all four factors.
    pub fn scale_product(&mut self, c: f64) {
        let s = c.abs().powf(0.25);
        self.w1 *= s.copysign(c);
        self.h1 *= s;
        self.w2 *= s;
        self.h2 *= s;
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.h1, &self.w2, &self.h2]
            .iter()
            .all(|f| f.iter().all(|v| v.is_finite()))
    }

    /// `‖X − (W1 H1ᵀ) ∘ (W2 H2ᵀ)‖_F`.
    pub fn residual_norm(&self, x: &MatrixHandle) -> Result<f64> {
        residual_norm_scaled(x, 1.0, self)
    }

    /// `‖X − (W1 H1ᵀ) ∘ (W2 H2ᵀ)‖_F / ‖X‖_F` (the absolute error when `X = 0`).
    pub fn relative_error(&self, x: &MatrixHandle) -> Result<f64> {
        let e = self.residual_norm(x)?;
        let nx = x.frobenius_norm();
        Ok(if nx > 0.0 { e / nx } else { e })
    }
}

/// `‖s·X − (W1 H1ᵀ) ∘ (W2 H2ᵀ)‖_F` without forming an `m x n` matrix when `X` is sparse.
///
/// Dense `X` is handled a row block at a time. Sparse `X` uses
/// `‖sX‖² − 2s⟨X, W Hᵀ⟩ + ⟨WᵀW, HᵀH⟩` with `W = W1 • W2`, `H = H1 • H2`,
/// where the cross term only visits the nonzeros.
pub fn residual_norm_scaled(x: &MatrixHandle, scale: f64, f: &HadamardFactors) -> Result<f64> {
    let (m, n) = x.shape();
    if f.rows() != m || f.cols() != n {
        return Err(Error::dims(
            "residual_norm",
            format!("X is {m}x{n}, factors are {}x{}", f.rows(), f.cols()),
        ));
    }
    match x {
        MatrixHandle::Dense(d) => {
            let (h1t, h2t) = (f.h1.transpose(), f.h2.transpose());
            let mut acc = 0.0;
            let mut start = 0;
            while start < m {
                let len = CHUNK_ROWS.min(m - start);
                let a = f.w1.rows(start, len) * &h1t;
                let b = f.w2.rows(start, len) * &h2t;
                let xr = d.rows(start, len);
                for j in 0..n {
                    for i in 0..len {
                        let e = scale * xr[(i, j)] - a[(i, j)] * b[(i, j)];
                        acc += e * e;
                    }
                }
                start += len;
            }
            Ok(acc.sqrt())
        }
        MatrixHandle::Sparse(s) => {
            let r = f.rank();
            let mut cross = 0.0;
            for (i, j, v) in s.iter() {
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for k in 0..r {
                    d1 += f.w1[(i, k)] * f.h1[(j, k)];
                    d2 += f.w2[(i, k)] * f.h2[(j, k)];
                }
                cross += v * d1 * d2;
            }
            let gw = gram_face_split(&f.w1, &f.w2);
            let gh = gram_face_split(&f.h1, &f.h2);
            let total = scale * scale * s.frobenius_norm_squared() - 2.0 * scale * cross + gw.dot(&gh);
            Ok(total.max(0.0).sqrt())
        }
    }
}
