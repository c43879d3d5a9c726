//! Dense and sparse data matrices plus the Hadamard / face-splitting algebra.

mod csr;

pub use csr::CsrMatrix;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest `rows * cols` a solver is allowed to materialize densely.
pub const DENSIFY_LIMIT: usize = 50_000_000;

/// A real matrix stored either densely (column-major) or in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixHandle {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl From<DMatrix<f64>> for MatrixHandle {
    fn from(m: DMatrix<f64>) -> Self {
        MatrixHandle::Dense(m)
    }
}

impl From<CsrMatrix> for MatrixHandle {
    fn from(m: CsrMatrix) -> Self {
        MatrixHandle::Sparse(m)
    }
}

impl MatrixHandle {
    pub fn rows(&self) -> usize {
        match self {
            MatrixHandle::Dense(d) => d.nrows(),
            MatrixHandle::Sparse(s) => s.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MatrixHandle::Dense(d) => d.ncols(),
            MatrixHandle::Sparse(s) => s.cols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, MatrixHandle::Sparse(_))
    }

    /// Stored entries: `rows * cols` for dense storage.
    pub fn nnz(&self) -> usize {
        match self {
            MatrixHandle::Dense(d) => d.len(),
            MatrixHandle::Sparse(s) => s.nnz(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            MatrixHandle::Dense(d) => d.norm(),
            MatrixHandle::Sparse(s) => s.frobenius_norm_squared().sqrt(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            MatrixHandle::Dense(d) => d[(i, j)],
            MatrixHandle::Sparse(s) => s.get(i, j),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            MatrixHandle::Dense(d) => d.clone(),
            MatrixHandle::Sparse(s) => s.to_dense(),
        }
    }

    /// Dense copy, refused when the matrix exceeds [`DENSIFY_LIMIT`] entries.
    pub fn densify(&self) -> Result<DMatrix<f64>> {
        let (m, n) = self.shape();
        if m.saturating_mul(n) > DENSIFY_LIMIT {
            return Err(Error::TooLargeToDensify { rows: m, cols: n });
        }
        Ok(self.to_dense())
    }

    pub fn to_sparse(&self) -> CsrMatrix {
        match self {
            MatrixHandle::Dense(d) => CsrMatrix::from_dense(d),
            MatrixHandle::Sparse(s) => s.clone(),
        }
    }

    pub fn transpose(&self) -> MatrixHandle {
        match self {
            MatrixHandle::Dense(d) => MatrixHandle::Dense(d.transpose()),
            MatrixHandle::Sparse(s) => MatrixHandle::Sparse(s.transpose()),
        }
    }

    pub fn scaled(&self, alpha: f64) -> MatrixHandle {
        match self {
            MatrixHandle::Dense(d) => MatrixHandle::Dense(d * alpha),
            MatrixHandle::Sparse(s) => {
                let mut s = s.clone();
                s.scale_mut(alpha);
                MatrixHandle::Sparse(s)
            }
        }
    }

    /// Entry-wise map for functions with `f(0) == 0`; sparse inputs keep their pattern.
    pub fn map_entries(&self, f: impl Fn(f64) -> f64) -> MatrixHandle {
        match self {
            MatrixHandle::Dense(d) => MatrixHandle::Dense(d.map(f)),
            MatrixHandle::Sparse(s) => MatrixHandle::Sparse(s.map_values(f)),
        }
    }

    /// `X * b`.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            MatrixHandle::Dense(d) => d * b,
            MatrixHandle::Sparse(s) => s.mul_dense(b),
        }
    }

    /// `X^T * b`.
    pub fn tr_mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            MatrixHandle::Dense(d) => d.tr_mul(b),
            MatrixHandle::Sparse(s) => s.tr_mul_dense(b),
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        match self {
            MatrixHandle::Dense(d) => {
                let xv = nalgebra::DVectorView::from_slice(x, x.len());
                let out = d * xv;
                y.copy_from_slice(out.as_slice());
            }
            MatrixHandle::Sparse(s) => s.mul_vec(x, y),
        }
    }

    pub fn tr_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        match self {
            MatrixHandle::Dense(d) => {
                let xv = nalgebra::DVectorView::from_slice(x, x.len());
                let out = d.tr_mul(&xv);
                y.copy_from_slice(out.as_slice());
            }
            MatrixHandle::Sparse(s) => s.tr_mul_vec(x, y),
        }
    }

    /// Calls `f(i, j, x_ij)` for every stored entry.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            MatrixHandle::Dense(d) => {
                for j in 0..d.ncols() {
                    for i in 0..d.nrows() {
                        f(i, j, d[(i, j)]);
                    }
                }
            }
            MatrixHandle::Sparse(s) => s.iter().for_each(|(i, j, v)| f(i, j, v)),
        }
    }

    /// Bytes of the backing storage.
    pub fn storage_bytes(&self) -> usize {
        match self {
            MatrixHandle::Dense(d) => d.len() * std::mem::size_of::<f64>(),
            MatrixHandle::Sparse(s) => s.storage_bytes(),
        }
    }
}

/// Face-splitting (row-wise Kronecker) product.
///
/// Row `i` of the result is `a_i^T ⊗ b_i^T`, so column `i * r2 + j` is
/// `A(:, i) ∘ B(:, j)` and each row is the column-major vec of `b_i a_i^T`.
pub fn face_split(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::dims(
            "face_split",
            format!("{} rows vs {} rows", a.nrows(), b.nrows()),
        ));
    }
    let (r1, r2) = (a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows(), r1 * r2);
    for i in 0..r1 {
        let ai = a.column(i);
        for j in 0..r2 {
            out.column_mut(i * r2 + j)
                .copy_from(&ai.component_mul(&b.column(j)));
        }
    }
    Ok(out)
}

/// Entry-wise product. A sparse operand keeps its sparsity pattern in the result.
pub fn hadamard(a: &MatrixHandle, b: &MatrixHandle) -> Result<MatrixHandle> {
    if a.shape() != b.shape() {
        return Err(Error::dims(
            "hadamard",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(match (a, b) {
        (MatrixHandle::Dense(x), MatrixHandle::Dense(y)) => {
            MatrixHandle::Dense(x.component_mul(y))
        }
        (MatrixHandle::Sparse(s), other) | (other, MatrixHandle::Sparse(s)) => {
            let entries: Vec<_> = s
                .iter()
                .map(|(i, j, v)| (i, j, v * other.get(i, j)))
                .collect();
            MatrixHandle::Sparse(CsrMatrix::from_triplets(s.rows(), s.cols(), entries)?)
        }
    })
}

const ERROR_BLOCK_ROWS: usize = 64;

/// `‖X − W Hᵀ‖_F` via `‖X‖² − 2⟨XᵀW, H⟩ + ⟨HᵀH, WᵀW⟩`, never forming `W Hᵀ`.
///
/// Dense inputs are instead accumulated over row blocks of the residual.
pub fn factored_error(x: &MatrixHandle, w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = x.shape();
    if w.nrows() != m || h.nrows() != n || w.ncols() != h.ncols() {
        return Err(Error::dims(
            "factored_error",
            format!(
                "X {m}x{n}, W {}x{}, H {}x{}",
                w.nrows(),
                w.ncols(),
                h.nrows(),
                h.ncols()
            ),
        ));
    }
    if let MatrixHandle::Dense(xd) = x {
        // dense X already costs O(mn); a blocked residual avoids the cancellation
        let ht = h.transpose();
        let mut acc = 0.0;
        let mut start = 0;
        while start < m {
            let len = ERROR_BLOCK_ROWS.min(m - start);
            let block = xd.rows(start, len) - w.rows(start, len) * &ht;
            acc += block.norm_squared();
            start += len;
        }
        return Ok(acc.sqrt());
    }
    let xnorm2 = x.frobenius_norm().powi(2);
    let cross = x.tr_mul_dense(w).dot(h);
    let gram = h.tr_mul(h).dot(&w.tr_mul(w));
    Ok((xnorm2 - 2.0 * cross + gram).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn random(rows: usize, cols: usize, rng: &mut Rng64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.uniform() * 2.0 - 1.0)
    }

    #[test]
    fn face_split_single_row() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let fs = face_split(&a, &b).unwrap();
        assert_eq!(fs.as_slice(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn face_split_with_ones_tiles_second_factor() {
        let mut rng = Rng64::new(3);
        let b = random(4, 3, &mut rng);
        let a = DMatrix::from_element(4, 2, 1.0);
        let fs = face_split(&a, &b).unwrap();
        for t in 0..2 {
            assert_eq!(fs.columns(t * 3, 3), b.columns(0, 3));
        }
    }

    #[test]
    fn face_split_matches_triple_loop() {
        let mut rng = Rng64::new(11);
        let a = random(5, 2, &mut rng);
        let b = random(5, 3, &mut rng);
        let fs = face_split(&a, &b).unwrap();
        for i in 0..5 {
            // row i equals vec(b_i a_i^T) in column-major order
            let outer = b.row(i).transpose() * a.row(i);
            for k in 0..6 {
                assert_eq!(fs[(i, k)], outer.as_slice()[k]);
            }
            for p in 0..2 {
                for q in 0..3 {
                    assert_eq!(fs[(i, p * 3 + q)], a[(i, p)] * b[(i, q)]);
                }
            }
        }
    }

    #[test]
    fn face_split_rejects_row_mismatch() {
        let a = DMatrix::zeros(3, 2);
        let b = DMatrix::zeros(4, 2);
        assert!(face_split(&a, &b).is_err());
    }

    #[test]
    fn hadamard_identities_and_loop_oracle() {
        let mut rng = Rng64::new(5);
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let ah = MatrixHandle::Dense(a.clone());
        let ones = MatrixHandle::Dense(DMatrix::from_element(3, 3, 1.0));
        let zeros = MatrixHandle::Dense(DMatrix::zeros(3, 3));
        assert_eq!(hadamard(&ah, &ones).unwrap(), ah);
        assert_eq!(hadamard(&ah, &zeros).unwrap().to_dense(), DMatrix::zeros(3, 3));
        let c = hadamard(&ah, &MatrixHandle::Dense(b.clone())).unwrap().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c[(i, j)], a[(i, j)] * b[(i, j)]);
            }
        }
        assert!(hadamard(&ah, &MatrixHandle::Dense(DMatrix::zeros(2, 3))).is_err());
    }

    #[test]
    fn hadamard_sparse_dense_keeps_pattern() {
        let s = CsrMatrix::from_triplets(2, 3, vec![(0, 1, 2.0), (1, 2, -1.0)]).unwrap();
        let d = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64 + 1.0);
        let out = hadamard(&MatrixHandle::Sparse(s), &MatrixHandle::Dense(d)).unwrap();
        assert!(out.is_sparse());
        assert_eq!(out.nnz(), 2);
        assert_eq!(out.get(0, 1), 4.0);
        assert_eq!(out.get(1, 2), -4.0);
    }

    #[test]
    fn factored_error_basic_cases() {
        let mut rng = Rng64::new(7);
        let x = MatrixHandle::Dense(random(6, 5, &mut rng));
        let w0 = DMatrix::zeros(6, 2);
        let h = random(5, 2, &mut rng);
        let e = factored_error(&x, &w0, &h).unwrap();
        assert!((e - x.frobenius_norm()).abs() < 1e-12);

        let w = random(6, 2, &mut rng);
        let exact = MatrixHandle::Dense(&w * h.transpose());
        assert!(factored_error(&exact, &w, &h).unwrap() <= 1e-8 * exact.frobenius_norm());
    }

    #[test]
    fn factored_error_sparse_matches_dense_materialization() {
        let mut rng = Rng64::new(19);
        let mut trip = Vec::new();
        for i in 0..30 {
            for j in 0..20 {
                if rng.uniform() < 0.1 {
                    trip.push((i, j, rng.uniform()));
                }
            }
        }
        let s = CsrMatrix::from_triplets(30, 20, trip).unwrap();
        let w = random(30, 4, &mut rng);
        let h = random(20, 4, &mut rng);
        let dense = (s.to_dense() - &w * h.transpose()).norm();
        let got = factored_error(&MatrixHandle::Sparse(s), &w, &h).unwrap();
        assert!((got - dense).abs() <= 1e-10 * dense);
    }
}
