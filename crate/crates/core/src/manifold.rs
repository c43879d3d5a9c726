//! Geometry of the face-split set `B̄_{m,r} = { W1 • W2 }`.
//!
//! Row `i` of `W1 • W2` is the column-major vec of the rank-one `r x r` matrix
//! `v_i u_iᵀ = ρ_i y_i x_iᵀ`, with `u_i` the row of `W1`, `v_i` the row of `W2`,
//! `x_i = u_i/μ_i`, `y_i = v_i/ν_i`, `μ_i = ‖u_i‖`, `ν_i = ‖v_i‖` and `ρ_i = μ_i ν_i`.
//! Reshaped row matrices therefore have their rows indexed by `W2` and their
//! columns indexed by `W1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::face_split;
use crate::svd::dense_svd;

/// A point of `B̄_{m,r}` kept in factored form with cached row frames.
#[derive(Debug, Clone)]
pub struct FaceSplitPoint {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl FaceSplitPoint {
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>) -> Result<Self> {
        if w1.shape() != w2.shape() {
            return Err(Error::dims(
                "FaceSplitPoint",
                format!("W1 {:?} vs W2 {:?}", w1.shape(), w2.shape()),
            ));
        }
        let (m, r) = w1.shape();
        let mut mu = vec![0.0; m];
        let mut nu = vec![0.0; m];
        let mut x = DMatrix::zeros(m, r);
        let mut y = DMatrix::zeros(m, r);
        for i in 0..m {
            mu[i] = w1.row(i).norm();
            nu[i] = w2.row(i).norm();
            if mu[i] * nu[i] > 0.0 {
                x.row_mut(i).copy_from(&(w1.row(i) / mu[i]));
                y.row_mut(i).copy_from(&(w2.row(i) / nu[i]));
            }
        }
        Ok(FaceSplitPoint { w1, w2, mu, nu, x, y })
    }

    pub fn rows(&self) -> usize {
        self.w1.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w1.ncols()
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn into_factors(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.w1, self.w2)
    }

    pub fn mu(&self, i: usize) -> f64 {
        self.mu[i]
    }

    pub fn nu(&self, i: usize) -> f64 {
        self.nu[i]
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.mu[i] * self.nu[i]
    }

    /// Unit direction of row `i` of `W1` (zero when `ρ_i = 0`).
    pub fn x(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Unit direction of row `i` of `W2` (zero when `ρ_i = 0`).
    pub fn y(&self, i: usize) -> DVector<f64> {
        self.y.row(i).transpose()
    }

    /// `W1 • W2`, an `m x r²` matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        face_split(&self.w1, &self.w2).expect("factors share a row count")
    }
}

/// Integer square root of a column count, or an error if it is not a perfect square.
pub fn square_side(cols: usize) -> Result<usize> {
    let r = (cols as f64).sqrt().round() as usize;
    if r == 0 || r * r != cols {
        return Err(Error::InvalidArgument(format!(
            "{cols} columns is not a positive perfect square r^2"
        )));
    }
    Ok(r)
}

/// Reshapes a length-`r²` row into the `r x r` matrix it is the column-major vec of.
pub fn unvec_row(a: &DMatrix<f64>, i: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |p, q| a[(i, q * r + p)])
}

/// Best rank-one approximation `σ u vᵀ` of a small square matrix.
///
/// The sign is fixed so that the largest-magnitude entry of `u` is nonnegative.
pub fn rank_one(block: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let svd = dense_svd(block);
    let mut u = svd.u.column(0).into_owned();
    let mut v = svd.v.column(0).into_owned();
    let lead = u.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
    if lead < 0.0 {
        u.neg_mut();
        v.neg_mut();
    }
    (svd.s[0], u, v)
}

/// Orthogonal projection of an `m x r²` matrix onto `B̄_{m,r}`, row by row.
///
/// Rows whose reshaped matrix vanishes project to zero rows in both factors.
pub fn project_bmr(a: &DMatrix<f64>) -> Result<FaceSplitPoint> {
    let r = square_side(a.ncols())?;
    let m = a.nrows();
    let mut w1 = DMatrix::zeros(m, r);
    let mut w2 = DMatrix::zeros(m, r);
    for i in 0..m {
        let (s, u, v) = rank_one(&unvec_row(a, i, r));
        if s > 0.0 {
            let root = s.sqrt();
            // columns of the reshaped row follow W1, rows follow W2
            w1.row_mut(i).copy_from(&(v * root).transpose());
            w2.row_mut(i).copy_from(&(u * root).transpose());
        }
    }
    FaceSplitPoint::new(w1, w2)
}

/// `𝒫_W(A)`: row `i` becomes `vec(A_i − (I − y_i y_iᵀ) A_i (I − x_i x_iᵀ))`.
pub fn tangent_project(point: &FaceSplitPoint, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = point.rank();
    if a.nrows() != point.rows() || a.ncols() != r * r {
        return Err(Error::dims(
            "tangent_project",
            format!(
                "point is {}x{r}^2, direction is {}x{}",
                point.rows(),
                a.nrows(),
                a.ncols()
            ),
        ));
    }
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        if point.rho(i) == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tangent space undefined at zero row {i}"
            )));
        }
        let ai = unvec_row(a, i, r);
        let x = point.x(i);
        let y = point.y(i);
        let yta = y.transpose() * &ai; // 1 x r
        let ax = &ai * &x; // r x 1
        let yax = (yta.clone() * &x)[(0, 0)];
        // y (yᵀA) + (A x) xᵀ − (yᵀ A x) y xᵀ
        let proj = &y * &yta + &ax * x.transpose() - (&y * x.transpose()) * yax;
        for q in 0..r {
            for p in 0..r {
                out[(i, q * r + p)] = proj[(p, q)];
            }
        }
    }
    Ok(out)
}
