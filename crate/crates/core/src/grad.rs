//! Objective machinery for `Ψ(W, H) = ½‖X − W Hᵀ‖²_F` with `W ∈ B̄_{m,r}`, `H ∈ B̄_{n,r}`.
//!
//! Face-split matrices are only ever formed a row chunk at a time, so the
//! memory held by a workspace is `O((m + n) r² + r⁴)` on top of `X`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::MatrixHandle;

/// Rows per chunk when face-split blocks are materialized.
pub const CHUNK_ROWS: usize = 128;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 500;
const DENSE_EIG_MAX: usize = 64;
const TINY_NORM: f64 = 1e-15;

/// Rows `start..start+len` of `a • b`.
pub fn face_split_rows(a: &DMatrix<f64>, b: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    let (r1, r2) = (a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(len, r1 * r2);
    for p in 0..r1 {
        for q in 0..r2 {
            let mut col = out.column_mut(p * r2 + q);
            for t in 0..len {
                col[t] = a[(start + t, p)] * b[(start + t, q)];
            }
        }
    }
    out
}

/// `(f1 • f2)ᵀ (f1 • f2)`, accumulated over row chunks.
pub fn gram_face_split(f1: &DMatrix<f64>, f2: &DMatrix<f64>) -> DMatrix<f64> {
    let k = f1.ncols() * f2.ncols();
    let mut g = DMatrix::zeros(k, k);
    let rows = f1.nrows();
    let mut start = 0;
    while start < rows {
        let len = CHUNK_ROWS.min(rows - start);
        let c = face_split_rows(f1, f2, start, len);
        g.gemm_tr(1.0, &c, &c, 1.0);
        start += len;
    }
    g
}

/// `scale · X (f1 • f2)` or, with `transpose`, `scale · Xᵀ (f1 • f2)`.
///
/// Sparse inputs accumulate one outer product per nonzero, costing
/// `O(nnz · r1 r2)` without forming the face-split matrix.
pub fn cross_product(
    x: &MatrixHandle,
    scale: f64,
    transpose: bool,
    f1: &DMatrix<f64>,
    f2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (m, n) = x.shape();
    let (out_rows, inner) = if transpose { (n, m) } else { (m, n) };
    if f1.nrows() != inner || f2.nrows() != inner {
        return Err(Error::dims(
            "cross_product",
            format!("X is {m}x{n}, factors have {} and {} rows", f1.nrows(), f2.nrows()),
        ));
    }
    let (r1, r2) = (f1.ncols(), f2.ncols());
    let mut out = DMatrix::zeros(out_rows, r1 * r2);
    match x {
        MatrixHandle::Dense(d) => {
            let mut start = 0;
            while start < inner {
                let len = CHUNK_ROWS.min(inner - start);
                let c = face_split_rows(f1, f2, start, len);
                if transpose {
                    out.gemm_tr(scale, &d.rows(start, len), &c, 1.0);
                } else {
                    out.gemm(scale, &d.columns(start, len), &c, 1.0);
                }
                start += len;
            }
        }
        MatrixHandle::Sparse(s) => {
            let mut buf = vec![0.0; r1 * r2];
            for (i, j, v) in s.iter() {
                let (target, src) = if transpose { (j, i) } else { (i, j) };
                let v = v * scale;
                for p in 0..r1 {
                    let a = v * f1[(src, p)];
                    for q in 0..r2 {
                        buf[p * r2 + q] = a * f2[(src, q)];
                    }
                }
                for (k, b) in buf.iter().enumerate() {
                    out[(target, k)] += b;
                }
            }
        }
    }
    Ok(out)
}

/// Per-block quantities reused across the inner iterations of one block update.
#[derive(Debug, Clone)]
pub struct BlockGradientWorkspace {
    /// Gram matrix of the fixed block, `r² x r²`.
    pub a: DMatrix<f64>,
    /// `X` times the fixed block (or `Xᵀ` for the `H` block).
    pub b: DMatrix<f64>,
    pub lipschitz: f64,
    pub alpha: f64,
}

impl BlockGradientWorkspace {
    /// Workspace for updating the block paired with the fixed factors `(f1, f2)`.
    ///
    /// With `transpose = false` the fixed factors are `H1, H2` (`n` rows) and the
    /// workspace serves the `W` block; with `transpose = true` the roles swap.
    pub fn new(
        x: &MatrixHandle,
        scale: f64,
        transpose: bool,
        f1: &DMatrix<f64>,
        f2: &DMatrix<f64>,
        tau: f64,
    ) -> Result<Self> {
        let b = cross_product(x, scale, transpose, f1, f2)?;
        let a = gram_face_split(f1, f2);
        Ok(Self::from_parts(a, b, tau))
    }

    pub fn from_parts(a: DMatrix<f64>, b: DMatrix<f64>, tau: f64) -> Self {
        let lipschitz = lipschitz(&a);
        let alpha = if lipschitz > 0.0 { tau / lipschitz } else { 0.0 };
        BlockGradientWorkspace { a, b, lipschitz, alpha }
    }
}

/// `G_W = W A − B = (W Hᵀ − X) H`.
pub fn grad_psi_w(w: &DMatrix<f64>, ws: &BlockGradientWorkspace) -> Result<DMatrix<f64>> {
    if w.ncols() != ws.a.nrows() || w.nrows() != ws.b.nrows() {
        return Err(Error::dims(
            "grad_psi_w",
            format!("W {:?}, A {:?}, B {:?}", w.shape(), ws.a.shape(), ws.b.shape()),
        ));
    }
    Ok(w * &ws.a - &ws.b)
}

/// Action of the block Hessian, `Y A`.
pub fn hess_psi_action(y: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    y * a
}

/// Spectral norm of a symmetric positive semidefinite matrix.
pub fn lipschitz(a: &DMatrix<f64>) -> f64 {
    let k = a.nrows();
    if k == 0 {
        return 0.0;
    }
    if k <= DENSE_EIG_MAX {
        return SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    }
    // deterministic start with no special alignment to any coordinate
    let mut v = DVector::from_fn(k, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7071).sin());
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let av = a * &v;
        lambda = v.dot(&av);
        let norm = av.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let resid = (&av - &v * lambda).norm();
        v = av / norm;
        if resid <= POWER_TOL * lambda.abs() {
            break;
        }
    }
    // one last Rayleigh quotient on the final iterate
    lambda.max(v.dot(&(a * &v)))
}

/// Column norms of `hf`, with norms below `1e-15` reported as one.
pub fn safe_column_norms(hf: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        hf.ncols(),
        hf.column_iter().map(|c| {
            let n = c.norm();
            if n < TINY_NORM {
                1.0
            } else {
                n
            }
        }),
    )
}

/// Rescales `(Wf, Hf)` so that `Hf` has unit columns while `Wf Hfᵀ` is unchanged.
///
/// Columns with norm below `1e-15` are left alone and report a norm of one.
pub fn rescale_columns(
    wf: &DMatrix<f64>,
    hf: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let norms = safe_column_norms(hf);
    let mut w = wf.clone();
    let mut h = hf.clone();
    for (k, &s) in norms.iter().enumerate() {
        w.column_mut(k).scale_mut(s);
        h.column_mut(k).unscale_mut(s);
    }
    (w, h, norms)
}
