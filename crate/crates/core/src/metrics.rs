//! Compression metrics: TSVD error curves, the matching rank `r⋆` and the relative gain `q⋆`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::MatrixHandle;
use crate::svd::{singular_values, tsvd, DENSE_SVD_MAX_DIM};

/// Relative difference below which two errors count as equal when ranking initializations.
pub const TIE_RTOL: f64 = 1e-4;
const FULL_SPECTRUM_MAX_ENTRIES: usize = 4_000_000;

/// `err[ϱ] = ‖X − TSVD_ϱ(X)‖_F / ‖X‖_F` for `ϱ = 0..=kmax`.
///
/// Small inputs use the full spectrum and exact tail sums; large ones subtract
/// the leading `kmax` energies from `‖X‖²`.
pub fn tsvd_error_curve(x: &MatrixHandle, kmax: usize) -> Result<Vec<f64>> {
    let (m, n) = x.shape();
    let min_dim = m.min(n);
    let kmax = kmax.min(min_dim);
    let total = x.frobenius_norm();
    if total == 0.0 {
        return Ok(vec![0.0; kmax + 1]);
    }
    let full = match x {
        MatrixHandle::Dense(_) => min_dim <= DENSE_SVD_MAX_DIM,
        MatrixHandle::Sparse(_) => m * n <= FULL_SPECTRUM_MAX_ENTRIES,
    };
    if full {
        let s = singular_values(&x.densify()?);
        let mut tail = vec![0.0; s.len() + 1];
        for i in (0..s.len()).rev() {
            tail[i] = tail[i + 1] + s[i] * s[i];
        }
        return Ok(tail[..=kmax].iter().map(|t| t.sqrt() / total).collect());
    }
    let mut curve = vec![1.0];
    if kmax > 0 {
        let s = tsvd(x, kmax)?.s;
        let mut left = total * total;
        for v in s.iter() {
            left -= v * v;
            curve.push(left.max(0.0).sqrt() / total);
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RStar {
    pub value: usize,
    /// Set when even the full-rank TSVD does not reach the target error.
    pub capped: bool,
}

/// `r⋆` from a precomputed curve; `None` when the curve is too short to decide.
///
/// If `err[2r] < err_hd` this is the largest `ϱ` with `err[ϱ] ≥ err_hd`,
/// otherwise the smallest `ϱ ≥ 2r` with `err[ϱ] ≤ err_hd`.
pub fn r_star_from_curve(curve: &[f64], r: usize, err_hd: f64, min_dim: usize) -> Option<RStar> {
    let base = 2 * r;
    if curve.len() <= base {
        return None;
    }
    if curve[base] < err_hd {
        let value = (0..base).rev().find(|&k| curve[k] >= err_hd).unwrap_or(0);
        return Some(RStar { value, capped: false });
    }
    match (base..curve.len()).find(|&k| curve[k] <= err_hd) {
        Some(value) => Some(RStar { value, capped: false }),
        None if curve.len() > min_dim => Some(RStar { value: min_dim, capped: true }),
        None => None,
    }
}

/// `r⋆` for `X`, extending the TSVD curve until the search terminates.
pub fn r_star(x: &MatrixHandle, r: usize, err_hd: f64) -> Result<RStar> {
    let min_dim = x.rows().min(x.cols());
    if r == 0 || 2 * r > min_dim {
        return Err(Error::InvalidArgument(format!(
            "r_star needs 1 <= 2r <= min(m, n) = {min_dim}, got r = {r}"
        )));
    }
    if !(err_hd >= 0.0) {
        return Err(Error::InvalidArgument(format!("error {err_hd} is not a nonnegative number")));
    }
    let mut kmax = (4 * r).min(min_dim);
    loop {
        let curve = tsvd_error_curve(x, kmax)?;
        if let Some(found) = r_star_from_curve(&curve, r, err_hd, min_dim) {
            return Ok(found);
        }
        kmax = (2 * kmax).min(min_dim);
    }
}

/// `q⋆ = (r⋆ − 2r) / (2r)`.
pub fn q_star(r_star: usize, r: usize) -> f64 {
    (r_star as f64 - 2.0 * r as f64) / (2.0 * r as f64)
}

/// Indices whose error is within the tie tolerance of the smallest one.
pub fn best_indices(errors: &[f64]) -> Vec<usize> {
    let best = errors.iter().cloned().filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Vec::new();
    }
    errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e.is_finite() && (e - best) <= TIE_RTOL * best)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub dataset: String,
    pub seed: u64,
    pub algo: String,
    pub init: String,
    pub rank: usize,
    pub rel_error: f64,
    pub elapsed: f64,
    pub iterations: usize,
    pub stop: String,
    pub r_star: Option<usize>,
    pub r_star_capped: bool,
    pub q_star: Option<f64>,
    pub best_init: bool,
    pub error: Option<String>,
}

impl CompressionReport {
    /// Fills `r_star` and `q_star` (stored as a fraction) from the run's error.
    pub fn attach_r_star(&mut self, x: &MatrixHandle) {
        if let Ok(rs) = r_star(x, self.rank, self.rel_error) {
            self.r_star = Some(rs.value);
            self.r_star_capped = rs.capped;
            self.q_star = Some(q_star(rs.value, self.rank));
        }
    }
}
