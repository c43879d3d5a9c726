//! Starting points for the Hadamard decomposition solvers.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::factors::HadamardFactors;
use crate::grad::{cross_product, gram_face_split};
use crate::manifold::project_bmr;
use crate::matrix::{face_split, MatrixHandle};
use crate::svd::{dense_svd, tsvd};

/// Relative singular value threshold used for the pseudo-inverse in FSL/FSR.
pub const PINV_RTOL: f64 = 1e-10;
const GAMMA_MIN_DENOM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    Svd,
    Fs,
    Fsl,
    Fsr,
}

impl InitKind {
    pub const ALL: [InitKind; 4] = [InitKind::Svd, InitKind::Fs, InitKind::Fsl, InitKind::Fsr];

    pub fn name(&self) -> &'static str {
        match self {
            InitKind::Svd => "svd",
            InitKind::Fs => "fs",
            InitKind::Fsl => "fsl",
            InitKind::Fsr => "fsr",
        }
    }

    /// Whether the initialization needs `r² <= min(m, n)`.
    pub fn needs_square_rank(&self) -> bool {
        !matches!(self, InitKind::Svd)
    }

    /// Parses `svd | fs | fsl | fsr | all`.
    pub fn parse_list(s: &str) -> Result<Vec<InitKind>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svd" => Ok(InitKind::Svd),
            "fs" => Ok(InitKind::Fs),
            "fsl" => Ok(InitKind::Fsl),
            "fsr" => Ok(InitKind::Fsr),
            other => Err(Error::InvalidArgument(format!(
                "unknown initialization `{other}` (expected svd, fs, fsl, fsr or all)"
            ))),
        }
    }
}

pub fn initialize(x: &MatrixHandle, r: usize, kind: InitKind) -> Result<HadamardFactors> {
    match kind {
        InitKind::Svd => init_svd_based(x, r),
        InitKind::Fs => init_fs(x, r),
        InitKind::Fsl => init_fsl(x, r),
        InitKind::Fsr => init_fsr(x, r),
    }
}

fn check_rank(x: &MatrixHandle, r: usize) -> Result<()> {
    let min_dim = x.rows().min(x.cols());
    if r == 0 || r > min_dim {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={min_dim}")));
    }
    Ok(())
}

fn check_square_rank(x: &MatrixHandle, r: usize, init: &'static str) -> Result<()> {
    check_rank(x, r)?;
    let min_dim = x.rows().min(x.cols());
    if r * r > min_dim {
        return Err(Error::InitUnavailable { init, needed: r * r, min_dim });
    }
    Ok(())
}

/// `X1 = √|X|`, `X2 = sign(X) ∘ X1`, each replaced by its rank-`r` truncation.
pub fn init_svd_based(x: &MatrixHandle, r: usize) -> Result<HadamardFactors> {
    check_rank(x, r)?;
    let x1 = x.map_entries(|v| v.abs().sqrt());
    let x2 = x.map_entries(|v| v.signum() * v.abs().sqrt());
    let (w1, h1) = tsvd(&x1, r)?.balanced_factors();
    let (w2, h2) = tsvd(&x2, r)?.balanced_factors();
    HadamardFactors::new(w1, h1, w2, h2)
}

/// Both factors of the rank-`r²` truncation projected onto the face-split set.
pub fn init_fs(x: &MatrixHandle, r: usize) -> Result<HadamardFactors> {
    check_square_rank(x, r, "fs")?;
    let (ut, vt) = tsvd(x, r * r)?.balanced_factors();
    let (w1, w2) = project_bmr(&ut)?.into_factors();
    let (h1, h2) = project_bmr(&vt)?.into_factors();
    HadamardFactors::new(w1, h1, w2, h2)
}

/// Projects the right factor, refits the left one by least squares, then projects it.
pub fn init_fsl(x: &MatrixHandle, r: usize) -> Result<HadamardFactors> {
    check_square_rank(x, r, "fsl")?;
    let (_, vt) = tsvd(x, r * r)?.balanced_factors();
    let hp = project_bmr(&vt)?;
    let h = hp.assemble();
    let u_star = least_squares_left(x, &h);
    let (w1, w2) = project_bmr(&u_star)?.into_factors();
    let (h1, h2) = hp.into_factors();
    HadamardFactors::new(w1, h1, w2, h2)
}

/// The left-projected variant: FSL on `Xᵀ` with the two sides exchanged.
pub fn init_fsr(x: &MatrixHandle, r: usize) -> Result<HadamardFactors> {
    check_square_rank(x, r, "fsr")?;
    Ok(init_fsl(&x.transpose(), r)?.transposed())
}

/// `X (H†)ᵀ`, the minimizer of `‖X − U Hᵀ‖_F` of least norm.
///
/// With `H = P Σ Qᵀ` this is `X P Σ⁻¹ Qᵀ`, dropping singular values below `1e-10 σ₁`.
pub fn least_squares_left(x: &MatrixHandle, h: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = dense_svd(h);
    let top = svd.s.iter().cloned().fold(0.0, f64::max);
    let keep = svd.s.iter().take_while(|&&s| s > PINV_RTOL * top && s > 0.0).count();
    if keep == 0 {
        return DMatrix::zeros(x.rows(), h.ncols());
    }
    let mut xp = x.mul_dense(&svd.u.columns(0, keep).into_owned());
    for j in 0..keep {
        xp.column_mut(j).unscale_mut(svd.s[j]);
    }
    xp * svd.v.columns(0, keep).transpose()
}

/// `γ⋆ = ⟨X H, W⟩ / ⟨WᵀW, HᵀH⟩`, the best scalar multiple of `W Hᵀ`; one when undefined.
pub fn optimal_gamma(x: &MatrixHandle, w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    if w.nrows() != x.rows() || h.nrows() != x.cols() || w.ncols() != h.ncols() {
        return Err(Error::dims(
            "optimal_gamma",
            format!("X {:?}, W {:?}, H {:?}", x.shape(), w.shape(), h.shape()),
        ));
    }
    let num = x.mul_dense(h).dot(w);
    let den = (w.transpose() * w).dot(&(h.transpose() * h));
    Ok(if den <= GAMMA_MIN_DENOM { 1.0 } else { num / den })
}

/// Rescales the factors by `γ⋆` computed on `W = W1 • W2`, `H = H1 • H2`.
pub fn apply_optimal_gamma(x: &MatrixHandle, f: &HadamardFactors) -> Result<HadamardFactors> {
    let xh = cross_product(x, 1.0, false, &f.h1, &f.h2)?;
    let num = xh.dot(&face_split(&f.w1, &f.w2)?);
    let den = gram_face_split(&f.w1, &f.w2).dot(&gram_face_split(&f.h1, &f.h2));
    let gamma = if den <= GAMMA_MIN_DENOM { 1.0 } else { num / den };
    let mut out = f.clone();
    out.scale_product(gamma);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;
    use crate::svd::dense_svd;

    fn random(rows: usize, cols: usize, rng: &mut Rng64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.uniform() * 2.0 - 1.0)
    }

    fn truncate(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let s = dense_svd(x);
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..k {
            out += s.u.column(j) * s.v.column(j).transpose() * s.s[j];
        }
        out
    }

    #[test]
    fn parsing_kinds() {
        assert_eq!(InitKind::parse_list("all").unwrap().len(), 4);
        assert_eq!(InitKind::parse_list("fs, fsr").unwrap(), vec![InitKind::Fs, InitKind::Fsr]);
        assert!(InitKind::parse_list("kmeans").is_err());
    }

    #[test]
    fn all_ones_is_reproduced_exactly() {
        let x = MatrixHandle::Dense(DMatrix::from_element(6, 5, 1.0));
        for r in 1..=3 {
            let f = init_svd_based(&x, r).unwrap();
            assert!((f.assemble() - x.to_dense()).norm() < 1e-12);
        }
    }

    #[test]
    fn nonnegative_data_gives_symmetric_factors() {
        let mut rng = Rng64::new(1);
        let x = DMatrix::from_fn(8, 7, |_, _| rng.uniform());
        let f = init_svd_based(&MatrixHandle::Dense(x), 2).unwrap();
        assert!((f.x1() - f.x2()).norm() < 1e-12);
    }

    #[test]
    fn svd_based_matches_dense_oracle() {
        let mut rng = Rng64::new(2);
        let x = random(20, 15, &mut rng);
        let f = init_svd_based(&MatrixHandle::Dense(x.clone()), 3).unwrap();
        let x1 = x.map(|v| v.abs().sqrt());
        let x2 = x.map(|v| v.signum() * v.abs().sqrt());
        let oracle = truncate(&x1, 3).component_mul(&truncate(&x2, 3));
        assert!((f.assemble() - &oracle).norm() <= 1e-10 * oracle.norm());
    }

    #[test]
    fn fs_family_requires_square_rank() {
        let x = MatrixHandle::Dense(DMatrix::from_element(10, 8, 1.0));
        for kind in [InitKind::Fs, InitKind::Fsl, InitKind::Fsr] {
            match initialize(&x, 3, kind) {
                Err(Error::InitUnavailable { needed: 9, min_dim: 8, .. }) => {}
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(initialize(&x, 2, InitKind::Fs).is_ok());
    }

    #[test]
    fn rank_one_fs_is_the_rank_one_truncation() {
        let mut rng = Rng64::new(3);
        let x = random(9, 7, &mut rng);
        let f = init_fs(&MatrixHandle::Dense(x.clone()), 1).unwrap();
        assert!((f.assemble() - truncate(&x, 1)).norm() < 1e-12);
    }

    #[test]
    fn fs_error_is_bounded_below_by_truncation() {
        let mut rng = Rng64::new(5);
        let x = random(30, 30, &mut rng);
        let f = init_fs(&MatrixHandle::Dense(x.clone()), 2).unwrap();
        let err = (f.assemble() - &x).norm();
        assert!(err >= (truncate(&x, 4) - &x).norm() - 1e-12);
    }

    #[test]
    fn fsl_recovers_exact_left_factor() {
        // X = Ũ Ṽᵀ with Ṽ already face-split: step 3 returns Ũ exactly
        let mut rng = Rng64::new(6);
        let vt = face_split(&random(20, 2, &mut rng), &random(20, 2, &mut rng)).unwrap();
        let ut = random(25, 4, &mut rng);
        let x = MatrixHandle::Dense(&ut * vt.transpose());
        let u_star = least_squares_left(&x, &vt);
        assert!((u_star - &ut).norm() < 1e-9 * ut.norm());
    }

    #[test]
    fn fsr_is_fsl_of_transpose() {
        let mut rng = Rng64::new(7);
        let x = MatrixHandle::Dense(random(12, 10, &mut rng));
        let a = init_fsr(&x, 2).unwrap();
        let b = init_fsl(&x.transpose(), 2).unwrap().transposed();
        assert_eq!(a, b);
    }

    #[test]
    fn fsl_step_is_least_squares_optimal() {
        let mut rng = Rng64::new(8);
        let x = MatrixHandle::Dense(random(25, 20, &mut rng));
        let (ut, vt) = tsvd(&x, 4).unwrap().balanced_factors();
        let h = project_bmr(&vt).unwrap().assemble();
        let u_star = least_squares_left(&x, &h);
        let xd = x.to_dense();
        let best = (&xd - &u_star * h.transpose()).norm();
        assert!(best <= (&xd - &ut * h.transpose()).norm() + 1e-12);
        for _ in 0..100 {
            let m = random(25, 4, &mut rng);
            assert!(best <= (&xd - m * h.transpose()).norm() + 1e-12);
        }
    }

    #[test]
    fn optimal_gamma_cases() {
        let mut rng = Rng64::new(9);
        let w = random(7, 3, &mut rng);
        let h = random(6, 3, &mut rng);
        let x = MatrixHandle::Dense(&w * h.transpose());
        assert!((optimal_gamma(&x, &w, &h).unwrap() - 1.0).abs() < 1e-12);
        assert!((optimal_gamma(&x, &(&w * 2.0), &h).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(optimal_gamma(&x, &DMatrix::zeros(7, 3), &h).unwrap(), 1.0);

        let xr = random(7, 6, &mut rng);
        let g = optimal_gamma(&MatrixHandle::Dense(xr.clone()), &w, &h).unwrap();
        let err = |c: f64| (&xr - &w * h.transpose() * c).norm_squared();
        assert!(err(g) <= err(g + 0.01) && err(g) <= err(g - 0.01));
        let eps = 1e-6;
        let slope = (err(g + eps) - err(g - eps)) / (2.0 * eps);
        assert!(slope.abs() < 1e-8 * err(g).max(1.0));
    }

    #[test]
    fn gamma_rescaling_never_hurts() {
        let mut rng = Rng64::new(10);
        let x = MatrixHandle::Dense(random(10, 9, &mut rng));
        let f = init_svd_based(&x, 2).unwrap();
        let g = apply_optimal_gamma(&x, &f).unwrap();
        assert!(g.residual_norm(&x).unwrap() <= f.residual_norm(&x).unwrap() + 1e-12);
    }
}
