//! Two-block projected gradient descent with rescaling and extrapolation.

use nalgebra::DMatrix;

use super::driver::{run_two_block, InnerUpdate};
use super::{RunRecord, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::HadamardFactors;
use crate::manifold::{rank_one, unvec_row, FaceSplitPoint};
use crate::matrix::MatrixHandle;

pub fn projbcd(
    x: &MatrixHandle,
    r: usize,
    init: &HadamardFactors,
    cfg: &SolverConfig,
) -> Result<RunRecord> {
    if init.rank() != r {
        return Err(Error::InvalidArgument(format!(
            "rank {r} does not match initial factors of rank {}",
            init.rank()
        )));
    }
    run_two_block(x, init, cfg, InnerUpdate::Project, "projbcd")
}

/// Projects row `t` of `z` onto rank-one form and stores the result as row `i` of `(f1, f2)`.
///
/// The joint sign of the new pair is chosen to agree with the rows it replaces,
/// which leaves the product unchanged and keeps successive iterates comparable.
pub(crate) fn project_row(
    z: &DMatrix<f64>,
    t: usize,
    r: usize,
    f1: &mut DMatrix<f64>,
    f2: &mut DMatrix<f64>,
    i: usize,
) {
    let (s, u, v) = rank_one(&unvec_row(z, t, r));
    if s <= 0.0 {
        f1.row_mut(i).fill(0.0);
        f2.row_mut(i).fill(0.0);
        return;
    }
    let root = s.sqrt();
    let mut align = 0.0;
    for k in 0..r {
        align += v[k] * f1[(i, k)] + u[k] * f2[(i, k)];
    }
    let sign = if align < 0.0 { -root } else { root };
    for k in 0..r {
        f1[(i, k)] = sign * v[k];
        f2[(i, k)] = sign * u[k];
    }
}

/// `project_bmr(W − α G)` at the point `p`, with rows sign-aligned to `p`.
pub fn projected_gradient_step(
    p: &FaceSplitPoint,
    g: &DMatrix<f64>,
    alpha: f64,
) -> Result<FaceSplitPoint> {
    let r = p.rank();
    if g.nrows() != p.rows() || g.ncols() != r * r {
        return Err(Error::dims(
            "projected_gradient_step",
            format!("point {}x{r}^2, gradient {:?}", p.rows(), g.shape()),
        ));
    }
    let z = p.assemble() - g * alpha;
    let mut f1 = p.w1().clone();
    let mut f2 = p.w2().clone();
    for i in 0..p.rows() {
        project_row(&z, i, r, &mut f1, &mut f2, i);
    }
    FaceSplitPoint::new(f1, f2)
}
