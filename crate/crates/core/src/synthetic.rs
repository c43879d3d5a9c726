//! Seeded test matrices: uniform noise, exact low rank, planted Hadamard products.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::CsrMatrix;
use crate::rng::Rng64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    /// i.i.d. uniform on `[0, 1)`.
    Generic,
    /// `U Vᵀ` with uniform `m x 2r` and `n x 2r` factors.
    LowRank,
    /// `(A1 B1ᵀ) ∘ (A2 B2ᵀ)` with uniform rank-`r` factors.
    Hd,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 3] = [SyntheticKind::Generic, SyntheticKind::LowRank, SyntheticKind::Hd];

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Generic => "generic",
            SyntheticKind::LowRank => "lowrank",
            SyntheticKind::Hd => "hd",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "generic" => Ok(SyntheticKind::Generic),
            "lowrank" => Ok(SyntheticKind::LowRank),
            "hd" => Ok(SyntheticKind::Hd),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic kind `{other}` (expected generic, lowrank or hd)"
            ))),
        }
    }
}

/// Column-major uniform fill, so the draw order does not depend on the storage type.
pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut Rng64) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform()).collect();
    DMatrix::from_vec(rows, cols, data)
}

pub fn gen_synthetic(kind: SyntheticKind, m: usize, n: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = Rng64::new(seed);
    match kind {
        SyntheticKind::Generic => uniform_matrix(m, n, &mut rng),
        SyntheticKind::LowRank => {
            let a = uniform_matrix(m, 2 * r, &mut rng);
            let b = uniform_matrix(2 * r, n, &mut rng);
            a * b
        }
        SyntheticKind::Hd => {
            let a1 = uniform_matrix(m, r, &mut rng);
            let b1 = uniform_matrix(r, n, &mut rng);
            let a2 = uniform_matrix(m, r, &mut rng);
            let b2 = uniform_matrix(r, n, &mut rng);
            (a1 * b1).component_mul(&(a2 * b2))
        }
    }
}

/// Sparse `m x n` matrix with exactly `round(density·m·n)` uniform nonzeros at distinct positions.
pub fn gen_sparse_uniform(m: usize, n: usize, density: f64, seed: u64) -> Result<CsrMatrix> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("density {density} outside [0, 1]")));
    }
    let total = m * n;
    let target = ((density * total as f64).round() as usize).min(total);
    let mut rng = Rng64::new(seed);
    let mut seen = HashSet::with_capacity(target);
    let mut triplets = Vec::with_capacity(target);
    while triplets.len() < target {
        let pos = rng.below(total);
        if seen.insert(pos) {
            let v = rng.uniform().max(f64::MIN_POSITIVE);
            triplets.push((pos / n, pos % n, v));
        }
    }
    CsrMatrix::from_triplets(m, n, triplets)
}
