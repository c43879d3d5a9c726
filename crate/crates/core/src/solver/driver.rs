//! Two-block loop shared by the projected and the row-flow solvers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{check_init, stagnated, FlowDiagnostics, IterationRecord, RunRecord, SolverConfig, StopReason};
use crate::error::{Error, Result};
use crate::extrapolation::ExtrapolationState;
use crate::factors::{residual_norm_scaled, HadamardFactors};
use crate::grad::{face_split_rows, safe_column_norms, BlockGradientWorkspace, CHUNK_ROWS};
use crate::matrix::MatrixHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InnerUpdate {
    Project,
    Flow,
}

pub(crate) fn run_two_block(
    x: &MatrixHandle,
    init: &HadamardFactors,
    cfg: &SolverConfig,
    update: InnerUpdate,
    algo: &str,
) -> Result<RunRecord> {
    cfg.validate()?;
    let clock = Instant::now();
    let (m, n) = x.shape();
    check_init(init, m, n, init.rank())?;
    let mut flow = (update == InnerUpdate::Flow).then(FlowDiagnostics::new);

    let xnorm = x.frobenius_norm();
    if xnorm == 0.0 {
        let r = init.rank();
        let factors = HadamardFactors::new(
            DMatrix::zeros(m, r),
            DMatrix::zeros(n, r),
            DMatrix::zeros(m, r),
            DMatrix::zeros(n, r),
        )?;
        return Ok(RunRecord {
            algo: algo.to_string(),
            trace: Vec::new(),
            factors,
            initial_error: 0.0,
            best_error: 0.0,
            iterations: 0,
            accepted_iterations: 0,
            elapsed: clock.elapsed().as_secs_f64(),
            stop: StopReason::ZeroInput,
            flow,
        });
    }
    let scale = 1.0 / xnorm;

    let mut acc = init.clone();
    acc.scale_product(scale);
    let mut err_acc = residual_norm_scaled(x, scale, &acc)?;
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

        let HadamardFactors { mut w1, mut h1, mut w2, mut h2 } = y;
        update_block(x, scale, false, &h1, &h2, &mut w1, &mut w2, cfg.k_w, cfg, update, &mut flow)?;
        let w1y = extrapolate(&w1, &acc.w1, beta);
        let w2y = extrapolate(&w2, &acc.w2, beta);
        update_block(x, scale, true, &w1y, &w2y, &mut h1, &mut h2, cfg.k_h, cfg, update, &mut flow)?;
        let h1y = extrapolate(&h1, &acc.h1, beta);
        let h2y = extrapolate(&h2, &acc.h2, beta);

        let next = HadamardFactors { w1, h1, w2, h2 };
        let err = residual_norm_scaled(x, scale, &next)?;
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("{algo}: error at iteration {}", trace.len() + 1)));
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
        // without extrapolation a rejected step would be repeated verbatim
        if !decreased && (!cfg.use_extrapolation || stagnated(rejections, ex.beta)) {
            break StopReason::Stagnation;
        }
    };

    acc.scale_product(xnorm);
    Ok(RunRecord {
        algo: algo.to_string(),
        iterations: trace.len(),
        trace,
        factors: acc,
        initial_error,
        best_error: err_acc,
        accepted_iterations,
        elapsed: clock.elapsed().as_secs_f64(),
        stop,
        flow,
    })
}

fn extrapolate(new: &DMatrix<f64>, old: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    if beta == 0.0 {
        return new.clone();
    }
    new * (1.0 + beta) - old * beta
}

fn scale_columns(f: &mut DMatrix<f64>, s: &DVector<f64>, invert: bool) {
    for (k, &v) in s.iter().enumerate() {
        if invert {
            f.column_mut(k).unscale_mut(v);
        } else {
            f.column_mut(k).scale_mut(v);
        }
    }
}

/// Replaces the free pair `(free1, free2)` by its `k` inner updates against the fixed pair.
#[allow(clippy::too_many_arguments)]
fn update_block(
    x: &MatrixHandle,
    scale: f64,
    transpose: bool,
    fixed1: &DMatrix<f64>,
    fixed2: &DMatrix<f64>,
    free1: &mut DMatrix<f64>,
    free2: &mut DMatrix<f64>,
    k: usize,
    cfg: &SolverConfig,
    update: InnerUpdate,
    flow: &mut Option<FlowDiagnostics>,
) -> Result<()> {
    let norms = cfg
        .use_rescaling
        .then(|| (safe_column_norms(fixed1), safe_column_norms(fixed2)));
    let ws = match &norms {
        Some((n1, n2)) => {
            let mut p1 = fixed1.clone();
            let mut p2 = fixed2.clone();
            scale_columns(&mut p1, n1, true);
            scale_columns(&mut p2, n2, true);
            BlockGradientWorkspace::new(x, scale, transpose, &p1, &p2, cfg.tau)?
        }
        None => BlockGradientWorkspace::new(x, scale, transpose, fixed1, fixed2, cfg.tau)?,
    };
    if let Some((n1, n2)) = &norms {
        scale_columns(free1, n1, false);
        scale_columns(free2, n2, false);
    }
    for _ in 0..k {
        inner_step(free1, free2, &ws, update, flow);
    }
    if let Some((n1, n2)) = &norms {
        scale_columns(free1, n1, true);
        scale_columns(free2, n2, true);
    }
    if free1.iter().chain(free2.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("factor update produced non-finite entries".into()));
    }
    Ok(())
}

/// One gradient step on every row of `f1 • f2`, processed a chunk of rows at a time.
///
/// Row `i` of `G = W A − B` only involves row `i` of `W`, so chunks are independent.
fn inner_step(
    f1: &mut DMatrix<f64>,
    f2: &mut DMatrix<f64>,
    ws: &BlockGradientWorkspace,
    update: InnerUpdate,
    flow: &mut Option<FlowDiagnostics>,
) {
    let r = f1.ncols();
    let rows = f1.nrows();
    let mut start = 0;
    while start < rows {
        let len = CHUNK_ROWS.min(rows - start);
        let wc = face_split_rows(f1, f2, start, len);
        let mut gc = &wc * &ws.a;
        gc -= ws.b.rows(start, len);
        match update {
            InnerUpdate::Project => {
                let z = wc - gc * ws.alpha;
                for t in 0..len {
                    super::projbcd::project_row(&z, t, r, f1, f2, start + t);
                }
            }
            InnerUpdate::Flow => {
                let diag = flow.as_mut().expect("flow diagnostics present");
                for t in 0..len {
                    super::manbcd::euler_row(&gc, t, r, ws.alpha, f1, f2, start + t, diag);
                }
            }
        }
        start += len;
    }
}
