//! Reference methods: exact block coordinate descent and (scaled) gradient descent on all four factors.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::extrapolation::{ExtrapolationState, BCD_TUPLE};
use crate::factors::{residual_norm_scaled, HadamardFactors};
use crate::matrix::{face_split, MatrixHandle};
use crate::svd::dense_svd;
use crate::solver::{check_init, stagnated, IterationRecord, RunRecord, SolverConfig, StopReason};

/// Relative Tikhonov shift used when a normal-equation matrix is not positive definite.
pub const TIKHONOV_RTOL: f64 = 1e-12;
/// Default learning rate of the gradient baselines.
pub const SCALED_GD_ETA: f64 = 1e-3;
const MIN_ETA: f64 = 1e-14;

/// Solves the symmetric positive semidefinite system `a z = b`.
///
/// Falls back to `a + λI` with `λ = 1e-12·tr(a)`, then to a least-norm SVD solve.
pub fn solve_normal(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        let z = ch.solve(b);
        if z.iter().all(|v| v.is_finite()) {
            return z;
        }
    }
    let lambda = TIKHONOV_RTOL * a.trace();
    if lambda > 0.0 {
        let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * lambda;
        if let Some(ch) = shifted.cholesky() {
            return ch.solve(b);
        }
    }
    let svd = dense_svd(a);
    let top = svd.s.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return DVector::zeros(b.len());
    }
    let utb = svd.u.transpose() * b;
    let mut z = DVector::zeros(a.ncols());
    for (k, &s) in svd.s.iter().enumerate() {
        if s > TIKHONOV_RTOL * top {
            z += svd.v.column(k) * (utb[k] / s);
        }
    }
    z
}

/// Best `z` for one column: `x_col ≈ (W1 h) ∘ (W2 z)` in least squares.
pub fn bcd_row_solve(
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    h: &DVector<f64>,
    x_col: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = w1.nrows();
    if w2.nrows() != m || x_col.len() != m || h.len() != w1.ncols() {
        return Err(Error::dims(
            "bcd_row_solve",
            format!("W1 {:?}, W2 {:?}, h {}, x {}", w1.shape(), w2.shape(), h.len(), x_col.len()),
        ));
    }
    let c = w1 * h;
    let mut design = w2.clone();
    for i in 0..m {
        design.row_mut(i).scale_mut(c[i]);
    }
    Ok(solve_normal(&(design.transpose() * &design), &(design.transpose() * x_col)))
}

/// All rows of the factor `F` minimizing `‖X − C ∘ (F Dᵀ)‖_F` at once.
///
/// Row `i` solves `(Σ_j c_ij² d_j d_jᵀ) f = Σ_j c_ij x_ij d_j`. Every system matrix
/// is a row of `(C ∘ C)(D • D)`, so the whole update costs `O(mn r²)`.
pub fn solve_factor(x: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.shape() != c.shape() || d.nrows() != x.ncols() {
        return Err(Error::dims(
            "solve_factor",
            format!("X {:?}, C {:?}, D {:?}", x.shape(), c.shape(), d.shape()),
        ));
    }
    let r = d.ncols();
    let systems = c.component_mul(c) * face_split(d, d)?;
    let rhs = c.component_mul(x) * d;
    let mut out = DMatrix::zeros(x.nrows(), r);
    for i in 0..x.nrows() {
        let a = DMatrix::from_iterator(r, r, systems.row(i).iter().cloned());
        let z = solve_normal(&a, &rhs.row(i).transpose());
        out.row_mut(i).copy_from(&z.transpose());
    }
    Ok(out)
}

fn extrapolate(new: &DMatrix<f64>, old: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    if beta == 0.0 {
        return new.clone();
    }
    new * (1.0 + beta) - old * beta
}

impl SolverConfig {
    /// Defaults for [`bcd`]: the same loop with the heavier extrapolation tuple.
    pub fn bcd_default() -> Self {
        SolverConfig { extrapolation: BCD_TUPLE, ..SolverConfig::default() }
    }
}

/// Cyclic exact updates of `W1, H1, W2, H2`, each followed by extrapolation.
///
/// `tau`, `k_w`, `k_h` and `use_rescaling` are ignored.
pub fn bcd(x: &MatrixHandle, r: usize, init: &HadamardFactors, cfg: &SolverConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let clock = Instant::now();
    let (m, n) = x.shape();
    check_init(init, m, n, r)?;
    let xd = x.densify()?;
    let xnorm = xd.norm();
    if xnorm == 0.0 {
        return zero_record("bcd", m, n, r, clock);
    }
    let scale = 1.0 / xnorm;
    let xsd = xd * scale;
    let xt = xsd.transpose();
    let xs = MatrixHandle::Dense(xsd.clone());

    let mut acc = init.clone();
    acc.scale_product(scale);
    let mut err_acc = residual_norm_scaled(&xs, 1.0, &acc)?;
    let initial_error = err_acc;
    let mut y = acc.clone();
    let mut ex = ExtrapolationState::new(cfg.extrapolation)?;
    let mut trace = Vec::new();
    let mut accepted_iterations = 0;
    let mut rejections = 0;

    let stop = loop {
        if err_acc <= cfg.tol {
            break StopReason::Tolerance;
        }
        if trace.len() >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        if clock.elapsed().as_secs_f64() >= cfg.time_limit {
            break StopReason::TimeLimit;
        }
        let beta = if cfg.use_extrapolation { ex.beta } else { 0.0 };

        let w1 = solve_factor(&xsd, &(&y.w2 * y.h2.transpose()), &y.h1)?;
        let w1y = extrapolate(&w1, &acc.w1, beta);
        let h1 = solve_factor(&xt, &(&y.h2 * y.w2.transpose()), &w1y)?;
        let h1y = extrapolate(&h1, &acc.h1, beta);
        let w2 = solve_factor(&xsd, &(&w1y * h1y.transpose()), &y.h2)?;
        let w2y = extrapolate(&w2, &acc.w2, beta);
        let h2 = solve_factor(&xt, &(&h1y * w1y.transpose()), &w2y)?;
        let h2y = extrapolate(&h2, &acc.h2, beta);

        let next = HadamardFactors { w1, h1, w2, h2 };
        let err = residual_norm_scaled(&xs, 1.0, &next)?;
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("bcd: error at iteration {}", trace.len() + 1)));
        }
        let decreased = err < err_acc;
        if cfg.use_extrapolation {
            ex = ex.update(decreased);
        }
        if decreased {
            acc = next;
            err_acc = err;
            y = HadamardFactors { w1: w1y, h1: h1y, w2: w2y, h2: h2y };
            accepted_iterations += 1;
            rejections = 0;
        } else {
            y = acc.clone();
            rejections += 1;
        }
        trace.push(IterationRecord {
            rel_error: err,
            elapsed: clock.elapsed().as_secs_f64(),
            beta,
            accepted: decreased,
        });
        if !decreased && (!cfg.use_extrapolation || stagnated(rejections, ex.beta)) {
            break StopReason::Stagnation;
        }
    };

    acc.scale_product(xnorm);
    Ok(RunRecord {
        algo: "bcd".into(),
        iterations: trace.len(),
        trace,
        factors: acc,
        initial_error,
        best_error: err_acc,
        accepted_iterations,
        elapsed: clock.elapsed().as_secs_f64(),
        stop,
        flow: None,
    })
}

fn zero_record(algo: &str, m: usize, n: usize, r: usize, clock: Instant) -> Result<RunRecord> {
    Ok(RunRecord {
        algo: algo.into(),
        trace: Vec::new(),
        factors: HadamardFactors::new(
            DMatrix::zeros(m, r),
            DMatrix::zeros(n, r),
            DMatrix::zeros(m, r),
            DMatrix::zeros(n, r),
        )?,
        initial_error: 0.0,
        best_error: 0.0,
        iterations: 0,
        accepted_iterations: 0,
        elapsed: clock.elapsed().as_secs_f64(),
        stop: StopReason::ZeroInput,
        flow: None,
    })
}

/// Gradients of `E = ‖(W1 H1ᵀ) ∘ (W2 H2ᵀ) − X‖²_F` in the order `W1, H1, W2, H2`.
pub fn hd_gradient(f: &HadamardFactors, x: &DMatrix<f64>) -> Result<[DMatrix<f64>; 4]> {
    if x.shape() != (f.rows(), f.cols()) {
        return Err(Error::dims("hd_gradient", format!("X {:?}, factors {}x{}", x.shape(), f.rows(), f.cols())));
    }
    let x1 = f.x1();
    let x2 = f.x2();
    let res = x1.component_mul(&x2) - x;
    let r2 = res.component_mul(&x2) * 2.0;
    let r1 = res.component_mul(&x1) * 2.0;
    Ok([&r2 * &f.h1, r2.transpose() * &f.w1, &r1 * &f.h2, r1.transpose() * &f.w2])
}

/// `(PᵀP)⁻¹`, or its pseudo-inverse when singular.
fn gram_inverse(p: &DMatrix<f64>) -> DMatrix<f64> {
    let g = p.transpose() * p;
    match g.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
        _ => {
            let top = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            g.pseudo_inverse(TIKHONOV_RTOL * top.max(f64::MIN_POSITIVE))
                .unwrap_or_else(|_| DMatrix::zeros(p.ncols(), p.ncols()))
        }
    }
}

/// One cyclic pass `F ← F − η ∇_F E · K` over `W1, H1, W2, H2`.
///
/// With `scaled`, `K` is the inverse Gram of the partner factor
/// (`H1` for `W1`, `W1` for `H1`, and so on); otherwise `K = I`.
pub fn scaled_gd_step(f: &HadamardFactors, x: &DMatrix<f64>, eta: f64, scaled: bool) -> Result<HadamardFactors> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    let mut cur = f.clone();
    for block in 0..4 {
        let g = hd_gradient(&cur, x)?;
        let mut step = g[block].clone();
        if scaled {
            let partner = match block {
                0 => &cur.h1,
                1 => &cur.w1,
                2 => &cur.h2,
                _ => &cur.w2,
            };
            step = step * gram_inverse(partner);
        }
        let target = match block {
            0 => &mut cur.w1,
            1 => &mut cur.h1,
            2 => &mut cur.w2,
            _ => &mut cur.h2,
        };
        *target -= step * eta;
    }
    Ok(cur)
}

/// Gradient descent on all four factors with a fixed learning rate `eta`.
///
/// A pass that increases the error is undone and `eta` is halved; the run
/// ends once `eta` falls below `1e-14`.
pub fn scaled_gd(
    x: &MatrixHandle,
    r: usize,
    init: &HadamardFactors,
    cfg: &SolverConfig,
    eta: f64,
    scaled: bool,
) -> Result<RunRecord> {
    cfg.validate()?;
    let algo = if scaled { "scaledgd" } else { "gd" };
    let clock = Instant::now();
    let (m, n) = x.shape();
    check_init(init, m, n, r)?;
    let xd = x.densify()?;
    let xnorm = xd.norm();
    if xnorm == 0.0 {
        return zero_record(algo, m, n, r, clock);
    }
    let scale = 1.0 / xnorm;
    let xs = xd * scale;
    let xh = MatrixHandle::Dense(xs.clone());
    let mut acc = init.clone();
    acc.scale_product(scale);
    let mut err_acc = residual_norm_scaled(&xh, 1.0, &acc)?;
    let initial_error = err_acc;
    let mut eta = eta;
    let mut trace = Vec::new();
    let mut accepted_iterations = 0;

    let stop = loop {
        if err_acc <= cfg.tol {
            break StopReason::Tolerance;
        }
        if trace.len() >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        if clock.elapsed().as_secs_f64() >= cfg.time_limit {
            break StopReason::TimeLimit;
        }
        if eta < MIN_ETA {
            break StopReason::Stagnation;
        }
        let next = scaled_gd_step(&acc, &xs, eta, scaled)?;
        let err = if next.is_finite() { residual_norm_scaled(&xh, 1.0, &next)? } else { f64::INFINITY };
        let accepted = err < err_acc;
        trace.push(IterationRecord {
            rel_error: err,
            elapsed: clock.elapsed().as_secs_f64(),
            beta: eta,
            accepted,
        });
        if accepted {
            acc = next;
            err_acc = err;
            accepted_iterations += 1;
        } else {
            eta *= 0.5;
        }
    };

    acc.scale_product(xnorm);
    Ok(RunRecord {
        algo: algo.into(),
        iterations: trace.len(),
        trace,
        factors: acc,
        initial_error,
        best_error: err_acc,
        accepted_iterations,
        elapsed: clock.elapsed().as_secs_f64(),
        stop,
        flow: None,
    })
}
