//! Projection-free block updates following the row-wise gradient flow on `B_{m,r}`.

use nalgebra::DMatrix;

use super::driver::{run_two_block, InnerUpdate};
use super::{FlowDiagnostics, RunRecord, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::HadamardFactors;
use crate::manifold::FaceSplitPoint;
use crate::matrix::MatrixHandle;

/// Per-row step cap, as a fraction of the step that would drive `μ_i ν_i` to zero.
const STEP_CAP: f64 = 0.95;

pub fn manbcd(
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
    run_two_block(x, init, cfg, InnerUpdate::Flow, "manbcd")
}

/// One explicit step on row `i` of `(f1, f2)` with gradient row `t` of `g`.
///
/// `μ` and `ν` follow the exact solution for frozen `ϑ = yᵀ G x` with `λ = 1/2`,
/// `x` and `y` take an Euler step scaled by the updated `ρ` and are renormalized.
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_row(
    g: &DMatrix<f64>,
    t: usize,
    r: usize,
    h: f64,
    f1: &mut DMatrix<f64>,
    f2: &mut DMatrix<f64>,
    i: usize,
    diag: &mut FlowDiagnostics,
) {
    let mut mu = 0.0;
    let mut nu = 0.0;
    for k in 0..r {
        mu += f1[(i, k)] * f1[(i, k)];
        nu += f2[(i, k)] * f2[(i, k)];
    }
    mu = mu.sqrt();
    nu = nu.sqrt();
    let rho = mu * nu;
    if rho == 0.0 {
        return;
    }
    let x: Vec<f64> = (0..r).map(|k| f1[(i, k)] / mu).collect();
    let y: Vec<f64> = (0..r).map(|k| f2[(i, k)] / nu).collect();
    // reshaped gradient: G_i(p, q) = g[t, q r + p], rows follow y and columns follow x
    let mut gx = vec![0.0; r];
    let mut gty = vec![0.0; r];
    for q in 0..r {
        for p in 0..r {
            let v = g[(t, q * r + p)];
            gx[p] += v * x[q];
            gty[q] += v * y[p];
        }
    }
    let theta: f64 = y.iter().zip(&gx).map(|(a, b)| a * b).sum();
    let mut hi = h;
    if theta > 0.0 {
        hi = hi.min(STEP_CAP * rho / theta);
    }
    let omega_sq = 1.0 - theta * hi / rho;
    if theta > 0.0 {
        diag.min_omega_sq = diag.min_omega_sq.min(omega_sq);
    }
    let omega = omega_sq.sqrt();
    let ratio = mu / nu;
    let mu = mu * omega;
    let nu = nu * omega;
    diag.max_ratio_drift = diag.max_ratio_drift.max(((mu / nu) - ratio).abs() / ratio);
    let c = hi / (mu * nu);
    let xn: Vec<f64> = (0..r).map(|k| x[k] + c * (-gty[k] + theta * x[k])).collect();
    let yn: Vec<f64> = (0..r).map(|k| y[k] + c * (-gx[k] + theta * y[k])).collect();
    let nx = xn.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = yn.iter().map(|v| v * v).sum::<f64>().sqrt();
    let drift = (nx - 1.0).abs().max((ny - 1.0).abs());
    diag.max_pre_drift = diag.max_pre_drift.max(drift);
    if hi > 0.0 {
        diag.max_pre_drift_over_h2 = diag.max_pre_drift_over_h2.max(drift / (hi * hi));
    }
    let mut ux = 0.0;
    let mut uy = 0.0;
    for k in 0..r {
        let a = xn[k] / nx;
        let b = yn[k] / ny;
        ux += a * a;
        uy += b * b;
        f1[(i, k)] = mu * a;
        f2[(i, k)] = nu * b;
    }
    diag.max_unit_deviation = diag
        .max_unit_deviation
        .max((ux.sqrt() - 1.0).abs())
        .max((uy.sqrt() - 1.0).abs());
}

/// One explicit step of the row flow at `p` with gradient `g` and step `h`.
pub fn manbcd_euler_step(p: &FaceSplitPoint, g: &DMatrix<f64>, h: f64) -> Result<FaceSplitPoint> {
    manbcd_euler_step_with_diagnostics(p, g, h).map(|(q, _)| q)
}

pub fn manbcd_euler_step_with_diagnostics(
    p: &FaceSplitPoint,
    g: &DMatrix<f64>,
    h: f64,
) -> Result<(FaceSplitPoint, FlowDiagnostics)> {
    let r = p.rank();
    if g.nrows() != p.rows() || g.ncols() != r * r {
        return Err(Error::dims(
            "manbcd_euler_step",
            format!("point {}x{r}^2, gradient {:?}", p.rows(), g.shape()),
        ));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let mut f1 = p.w1().clone();
    let mut f2 = p.w2().clone();
    let mut diag = FlowDiagnostics::new();
    for i in 0..p.rows() {
        euler_row(g, i, r, h, &mut f1, &mut f2, i, &mut diag);
    }
    Ok((FaceSplitPoint::new(f1, f2)?, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{grad_psi_w, BlockGradientWorkspace};
    use crate::manifold::tangent_project;
    use crate::matrix::face_split;
    use crate::rng::Rng64;
    use nalgebra::DVector;

    fn random(rows: usize, cols: usize, rng: &mut Rng64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.uniform() * 2.0 - 1.0)
    }

    #[test]
    fn zero_gradient_leaves_point_unchanged() {
        let mut rng = Rng64::new(1);
        let p = FaceSplitPoint::new(random(5, 3, &mut rng), random(5, 3, &mut rng)).unwrap();
        let q = manbcd_euler_step(&p, &DMatrix::zeros(5, 9), 0.1).unwrap();
        assert!((q.w1() - p.w1()).norm() < 1e-15);
        assert!((q.w2() - p.w2()).norm() < 1e-15);
    }

    // integrates the row system with frozen G by classical RK4 at step 1e-5
    fn reference_flow(
        mu: f64,
        nu: f64,
        x: DVector<f64>,
        y: DVector<f64>,
        g: &DMatrix<f64>,
        t_end: f64,
    ) -> (f64, f64, DVector<f64>, DVector<f64>) {
        let r = x.len();
        let pack = |mu: f64, nu: f64, x: &DVector<f64>, y: &DVector<f64>| {
            let mut s = DVector::zeros(2 + 2 * r);
            s[0] = mu;
            s[1] = nu;
            s.rows_mut(2, r).copy_from(x);
            s.rows_mut(2 + r, r).copy_from(y);
            s
        };
        let rhs = |s: &DVector<f64>| {
            let (mu, nu) = (s[0], s[1]);
            let x = s.rows(2, r).into_owned();
            let y = s.rows(2 + r, r).into_owned();
            let theta = (y.transpose() * g * &x)[(0, 0)];
            let rho = mu * nu;
            let dx = (-(g.transpose() * &y) + &x * theta) / rho;
            let dy = (-(g * &x) + &y * theta) / rho;
            pack(-0.5 * theta / nu, -0.5 * theta / mu, &dx, &dy)
        };
        let dt = 1e-5;
        let steps = (t_end / dt).round() as usize;
        let mut s = pack(mu, nu, &x, &y);
        for _ in 0..steps {
            let k1 = rhs(&s);
            let k2 = rhs(&(&s + &k1 * (dt / 2.0)));
            let k3 = rhs(&(&s + &k2 * (dt / 2.0)));
            let k4 = rhs(&(&s + &k3 * dt));
            s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        (s[0], s[1], s.rows(2, r).into_owned(), s.rows(2 + r, r).into_owned())
    }

    #[test]
    fn single_row_against_fine_integration() {
        let w1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let w2 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let p = FaceSplitPoint::new(w1, w2).unwrap();
        // G_1 = I_2 in column-major vec form
        let g = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 1.0]);
        let q = manbcd_euler_step(&p, &g, 0.1).unwrap();
        assert!((q.mu(0) - 0.9f64.sqrt()).abs() < 1e-14);
        assert!((q.rho(0) - 0.9).abs() < 1e-14);
        let gi = DMatrix::identity(2, 2);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let (mu, nu, x, y) = reference_flow(1.0, 1.0, e1.clone(), e1, &gi, 0.1);
        assert!((q.mu(0) - mu).abs() < 1e-3 && (q.nu(0) - nu).abs() < 1e-3);
        assert!((q.x(0) - x).norm() < 1e-3 && (q.y(0) - y).norm() < 1e-3);
    }

    #[test]
    fn generic_row_against_fine_integration() {
        let mut rng = Rng64::new(9);
        let p = FaceSplitPoint::new(random(1, 3, &mut rng) * 2.0, random(1, 3, &mut rng) * 2.0)
            .unwrap();
        let g = random(1, 9, &mut rng) * 0.1;
        let h = 1e-3;
        let q = manbcd_euler_step(&p, &g, h).unwrap();
        let gi = DMatrix::from_fn(3, 3, |a, b| g[(0, b * 3 + a)]);
        let (mu, nu, x, y) = reference_flow(p.mu(0), p.nu(0), p.x(0), p.y(0), &gi, h);
        let w_ref = face_split(
            &DMatrix::from_row_slice(1, 3, (x * mu).as_slice()),
            &DMatrix::from_row_slice(1, 3, (y * nu).as_slice()),
        )
        .unwrap();
        assert!((q.assemble() - w_ref).norm() < 1e-5);
    }

    #[test]
    fn small_steps_decrease_the_objective() {
        let mut rng = Rng64::new(2);
        for _ in 0..100 {
            let x = random(6, 5, &mut rng);
            let h = face_split(&random(5, 2, &mut rng), &random(5, 2, &mut rng)).unwrap();
            let p = FaceSplitPoint::new(random(6, 2, &mut rng), random(6, 2, &mut rng)).unwrap();
            let ws = BlockGradientWorkspace::from_parts(h.transpose() * &h, &x * &h, 0.95);
            let g = grad_psi_w(&p.assemble(), &ws).unwrap();
            let q = manbcd_euler_step(&p, &g, 1e-3 * ws.alpha).unwrap();
            let before = (&x - p.assemble() * h.transpose()).norm();
            let after = (&x - q.assemble() * h.transpose()).norm();
            assert!(after < before);
        }
    }

    #[test]
    fn invariants_hold_after_a_step() {
        let mut rng = Rng64::new(3);
        let p = FaceSplitPoint::new(random(40, 3, &mut rng), random(40, 3, &mut rng)).unwrap();
        let g = random(40, 9, &mut rng);
        let (q, d) = manbcd_euler_step_with_diagnostics(&p, &g, 0.5).unwrap();
        assert!(d.max_unit_deviation <= 1e-10);
        for i in 0..40 {
            let before = p.mu(i) / p.nu(i);
            let after = q.mu(i) / q.nu(i);
            assert!((after - before).abs() <= 1e-14 * before);
            assert!((q.x(i).norm() - 1.0).abs() <= 1e-10);
        }
        assert!(d.min_omega_sq >= 0.05 - 1e-15);
    }

    #[test]
    fn zero_rows_are_skipped_and_bad_inputs_rejected() {
        let mut w1 = DMatrix::from_element(2, 2, 1.0);
        w1.row_mut(1).fill(0.0);
        let p = FaceSplitPoint::new(w1, DMatrix::from_element(2, 2, 1.0)).unwrap();
        let g = DMatrix::from_element(2, 4, 0.3);
        let q = manbcd_euler_step(&p, &g, 0.1).unwrap();
        assert_eq!(q.w1().row(1).norm(), 0.0);
        let mut bad = g.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(manbcd_euler_step(&p, &bad, 0.1).is_err());
        assert!(manbcd_euler_step(&p, &g, 0.0).is_err());
    }

    #[test]
    fn decrease_ratio_tracks_tangent_norm() {
        // Ψ(h) − Ψ(0) ≈ −h ‖P_W(G)‖² for small h
        let mut rng = Rng64::new(4);
        let x = random(6, 5, &mut rng);
        let hm = face_split(&random(5, 2, &mut rng), &random(5, 2, &mut rng)).unwrap();
        let p = FaceSplitPoint::new(random(6, 2, &mut rng), random(6, 2, &mut rng)).unwrap();
        let ws = BlockGradientWorkspace::from_parts(hm.transpose() * &hm, &x * &hm, 0.95);
        let g = grad_psi_w(&p.assemble(), &ws).unwrap();
        let pg = tangent_project(&p, &g).unwrap();
        let psi = |w: &DMatrix<f64>| 0.5 * (&x - w * hm.transpose()).norm_squared();
        let base = psi(&p.assemble());
        let h = 1e-4 * ws.alpha;
        let q = manbcd_euler_step(&p, &g, h).unwrap();
        let ratio = (base - psi(&q.assemble())) / (h * pg.norm_squared());
        assert!((ratio - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}
