//! Riemannian gradient descent on `M_r x M_r` for `Φ(X1, X2) = ½‖X − X1 ∘ X2‖²_F`.

use std::time::Instant;

use nalgebra::DMatrix;

use super::{check_init, IterationRecord, RunRecord, SolverConfig, StopReason};
use crate::error::{Error, Result};
use crate::factors::HadamardFactors;
use crate::matrix::MatrixHandle;
use crate::svd::dense_svd;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const SINGULAR_FLOOR: f64 = 1e-12;
const GRAD_FLOOR: f64 = 1e-10;

/// `U S Vᵀ` with orthonormal `U` (`m x r`), `V` (`n x r`) and an invertible core `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRankPoint {
    pub u: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl FixedRankPoint {
    pub fn new(u: DMatrix<f64>, s: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = u.ncols();
        if v.ncols() != r || s.shape() != (r, r) {
            return Err(Error::dims(
                "FixedRankPoint",
                format!("U {:?}, S {:?}, V {:?}", u.shape(), s.shape(), v.shape()),
            ));
        }
        Ok(FixedRankPoint { u, s, v })
    }

    /// Rank-`r` point equal to `W Hᵀ`, via thin QR of both factors and an SVD of the core.
    ///
    /// Singular values below `1e-12 σ₁` are lifted to that floor so the point stays on `M_r`.
    pub fn from_factors(w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<Self> {
        if w.ncols() != h.ncols() {
            return Err(Error::dims("FixedRankPoint::from_factors", "factor ranks differ"));
        }
        let r = w.ncols();
        let qw = w.clone().qr();
        let qh = h.clone().qr();
        let core = qw.r() * qh.r().transpose();
        let svd = dense_svd(&core);
        let u = qw.q() * svd.u.columns(0, r);
        let v = qh.q() * svd.v.columns(0, r);
        Ok(FixedRankPoint { u, s: floored_diag(svd.s.as_slice(), r), v })
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * &self.s * self.v.transpose()
    }

    /// Orthogonal projection onto the tangent space: `G − (I − UUᵀ) G (I − VVᵀ)`.
    pub fn tangent_project(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let ug = &self.u * (self.u.transpose() * g);
        let gv = (g * &self.v) * self.v.transpose();
        let ugv = &self.u * (self.u.transpose() * g * &self.v) * self.v.transpose();
        ug + gv - ugv
    }

    /// `W = U S`, `H = V`.
    pub fn into_factors(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (&self.u * &self.s, self.v)
    }
}

fn floored_diag(s: &[f64], r: usize) -> DMatrix<f64> {
    let top = s.first().copied().unwrap_or(0.0);
    let floor = if top > 0.0 { SINGULAR_FLOOR * top } else { SINGULAR_FLOOR };
    DMatrix::from_fn(r, r, |i, j| if i == j { s[i].max(floor) } else { 0.0 })
}

fn check_shapes(x: &DMatrix<f64>, x1: &FixedRankPoint, x2: &FixedRankPoint) -> Result<()> {
    let shape = (x1.u.nrows(), x1.v.nrows());
    if x.shape() != shape || (x2.u.nrows(), x2.v.nrows()) != shape {
        return Err(Error::dims(
            "standard representation",
            format!("X {:?}, X1 {:?}, X2 {:?}", x.shape(), shape, (x2.u.nrows(), x2.v.nrows())),
        ));
    }
    Ok(())
}

/// Euclidean gradient pair `(−R ∘ X2, −R ∘ X1)` with `R = X − X1 ∘ X2`.
pub fn grad_phi(
    x: &DMatrix<f64>,
    x1: &FixedRankPoint,
    x2: &FixedRankPoint,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shapes(x, x1, x2)?;
    let d1 = x1.to_dense();
    let d2 = x2.to_dense();
    Ok(grad_phi_dense(x, &d1, &d2))
}

fn grad_phi_dense(x: &DMatrix<f64>, d1: &DMatrix<f64>, d2: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = d1.component_mul(d2);
    r -= x;
    // r now holds −R
    (r.component_mul(d2), r.component_mul(d1))
}

/// Euclidean Hessian of `Φ` applied to `(A, B)`.
pub fn hess_phi_action(
    x: &DMatrix<f64>,
    x1: &FixedRankPoint,
    x2: &FixedRankPoint,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shapes(x, x1, x2)?;
    if a.shape() != x.shape() || b.shape() != x.shape() {
        return Err(Error::dims("hess_phi_action", "direction shape differs from X"));
    }
    Ok(hess_phi_dense(x, &x1.to_dense(), &x2.to_dense(), a, b))
}

fn hess_phi_dense(
    x: &DMatrix<f64>,
    d1: &DMatrix<f64>,
    d2: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mixed = d1.component_mul(d2) * 2.0 - x;
    let ha = a.component_mul(&d2.component_mul(d2)) + mixed.component_mul(b);
    let hb = b.component_mul(&d1.component_mul(d1)) + mixed.component_mul(a);
    (ha, hb)
}

/// Riemannian gradient of one factor in factored form: `ξ = U M Vᵀ + Up Vᵀ + U Vpᵀ`.
struct TangentVector {
    m: DMatrix<f64>,
    up: DMatrix<f64>,
    vp: DMatrix<f64>,
}

impl TangentVector {
    fn new(p: &FixedRankPoint, g: &DMatrix<f64>) -> Self {
        let gv = g * &p.v;
        let gtu = g.transpose() * &p.u;
        let m = p.u.transpose() * &gv;
        let up = gv - &p.u * &m;
        let vp = gtu - &p.v * m.transpose();
        TangentVector { m, up, vp }
    }

    fn norm_squared(&self) -> f64 {
        self.m.norm_squared() + self.up.norm_squared() + self.vp.norm_squared()
    }

    fn to_dense(&self, p: &FixedRankPoint) -> DMatrix<f64> {
        (&p.u * &self.m + &self.up) * p.v.transpose() + &p.u * self.vp.transpose()
    }
}

/// Rank-`r` truncation of `X − t ξ`, computed from the `2r x 2r` core.
fn retract(p: &FixedRankPoint, xi: &TangentVector, t: f64) -> FixedRankPoint {
    let r = p.rank();
    let mut left = DMatrix::zeros(p.u.nrows(), 2 * r);
    left.columns_mut(0, r).copy_from(&p.u);
    left.columns_mut(r, r).copy_from(&xi.up);
    let mut right = DMatrix::zeros(p.v.nrows(), 2 * r);
    right.columns_mut(0, r).copy_from(&p.v);
    right.columns_mut(r, r).copy_from(&xi.vp);
    let mut k = DMatrix::zeros(2 * r, 2 * r);
    k.view_mut((0, 0), (r, r)).copy_from(&(&p.s - &xi.m * t));
    for i in 0..r {
        k[(i, r + i)] = -t;
        k[(r + i, i)] = -t;
    }
    let ql = left.qr();
    let qr = right.qr();
    let core = ql.r() * k * qr.r().transpose();
    let svd = dense_svd(&core);
    FixedRankPoint {
        u: ql.q() * svd.u.columns(0, r),
        s: floored_diag(svd.s.as_slice(), r),
        v: qr.q() * svd.v.columns(0, r),
    }
}

fn objective(x: &DMatrix<f64>, d1: &DMatrix<f64>, d2: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for ((a, b), c) in d1.iter().zip(d2.iter()).zip(x.iter()) {
        let e = c - a * b;
        acc += e * e;
    }
    0.5 * acc
}

/// Joint Riemannian gradient descent with Armijo backtracking and SVD-based retraction.
///
/// The first trial step of every iteration is the exact minimizer of the quadratic
/// model along the negative gradient (falling back to twice the previous accepted
/// step when the model has no positive curvature). Only `tol`, `max_iters` and
/// `time_limit` are read from the configuration.
pub fn rgd_standard(
    x: &MatrixHandle,
    r: usize,
    init: &HadamardFactors,
    cfg: &SolverConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    let clock = Instant::now();
    let (m, n) = x.shape();
    check_init(init, m, n, r)?;
    let xd = x.densify()?;
    let xnorm = xd.norm();
    if xnorm == 0.0 {
        let factors = HadamardFactors::new(
            DMatrix::zeros(m, r),
            DMatrix::zeros(n, r),
            DMatrix::zeros(m, r),
            DMatrix::zeros(n, r),
        )?;
        return Ok(RunRecord {
            algo: "rgd".into(),
            trace: Vec::new(),
            factors,
            initial_error: 0.0,
            best_error: 0.0,
            iterations: 0,
            accepted_iterations: 0,
            elapsed: clock.elapsed().as_secs_f64(),
            stop: StopReason::ZeroInput,
            flow: None,
        });
    }
    let xs = xd / xnorm;
    let root = xnorm.sqrt();
    let mut p1 = FixedRankPoint::from_factors(&(&init.w1 / root), &init.h1)?;
    let mut p2 = FixedRankPoint::from_factors(&(&init.w2 / root), &init.h2)?;
    let mut d1 = p1.to_dense();
    let mut d2 = p2.to_dense();
    let mut f = objective(&xs, &d1, &d2);
    let initial_error = (2.0 * f).sqrt();
    let mut trace = Vec::new();
    let mut last_step = 1.0;

    let stop = loop {
        let err = (2.0 * f).sqrt();
        if err <= cfg.tol {
            break StopReason::Tolerance;
        }
        if trace.len() >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        if clock.elapsed().as_secs_f64() >= cfg.time_limit {
            break StopReason::TimeLimit;
        }
        let (g1, g2) = grad_phi_dense(&xs, &d1, &d2);
        let xi1 = TangentVector::new(&p1, &g1);
        let xi2 = TangentVector::new(&p2, &g2);
        let gnorm2 = xi1.norm_squared() + xi2.norm_squared();
        if gnorm2.sqrt() < GRAD_FLOOR {
            break StopReason::Stagnation;
        }
        let curvature = {
            let e1 = xi1.to_dense(&p1);
            let e2 = xi2.to_dense(&p2);
            let (h1, h2) = hess_phi_dense(&xs, &d1, &d2, &e1, &e2);
            h1.dot(&e1) + h2.dot(&e2)
        };
        let mut t = if curvature > 0.0 { gnorm2 / curvature } else { 2.0 * last_step };

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let q1 = retract(&p1, &xi1, t);
            let q2 = retract(&p2, &xi2, t);
            let n1 = q1.to_dense();
            let n2 = q2.to_dense();
            let fq = objective(&xs, &n1, &n2);
            if fq <= f - ARMIJO_C * t * gnorm2 {
                accepted = Some((q1, q2, n1, n2, fq));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((q1, q2, n1, n2, fq)) => {
                p1 = q1;
                p2 = q2;
                d1 = n1;
                d2 = n2;
                f = fq;
                last_step = t;
                trace.push(IterationRecord {
                    rel_error: (2.0 * f).sqrt(),
                    elapsed: clock.elapsed().as_secs_f64(),
                    beta: t,
                    accepted: true,
                });
            }
            None => break StopReason::Stagnation,
        }
    };

    let (w1, h1) = p1.into_factors();
    let (w2, h2) = p2.into_factors();
    let mut factors = HadamardFactors::new(w1, h1, w2, h2)?;
    factors.scale_product(xnorm);
    if !factors.is_finite() {
        return Err(Error::NonFinite("rgd factors".into()));
    }
    Ok(RunRecord {
        algo: "rgd".into(),
        iterations: trace.len(),
        accepted_iterations: trace.len(),
        trace,
        factors,
        initial_error,
        best_error: (2.0 * f).sqrt(),
        elapsed: clock.elapsed().as_secs_f64(),
        stop,
        flow: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn random(rows: usize, cols: usize, rng: &mut Rng64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.uniform() * 2.0 - 1.0)
    }

    fn point(m: usize, n: usize, r: usize, rng: &mut Rng64) -> FixedRankPoint {
        FixedRankPoint::from_factors(&random(m, r, rng), &random(n, r, rng)).unwrap()
    }

    #[test]
    fn from_factors_reproduces_product() {
        let mut rng = Rng64::new(1);
        let w = random(8, 3, &mut rng);
        let h = random(6, 3, &mut rng);
        let p = FixedRankPoint::from_factors(&w, &h).unwrap();
        assert!((p.to_dense() - &w * h.transpose()).norm() < 1e-12);
        assert!((p.u.transpose() * &p.u - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((p.v.transpose() * &p.v - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_exact_fit_and_loop_oracle() {
        let mut rng = Rng64::new(2);
        let p1 = point(6, 5, 2, &mut rng);
        let p2 = point(6, 5, 2, &mut rng);
        let exact = p1.to_dense().component_mul(&p2.to_dense());
        let (g1, g2) = grad_phi(&exact, &p1, &p2).unwrap();
        assert!(g1.norm() < 1e-12 && g2.norm() < 1e-12);

        let x = random(6, 5, &mut rng);
        let (g1, g2) = grad_phi(&x, &p1, &p2).unwrap();
        let (a, b) = (p1.to_dense(), p2.to_dense());
        for i in 0..6 {
            for j in 0..5 {
                let res = x[(i, j)] - a[(i, j)] * b[(i, j)];
                assert!((g1[(i, j)] + res * b[(i, j)]).abs() < 1e-13);
                assert!((g2[(i, j)] + res * a[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradient_with_vanishing_second_factor() {
        let mut rng = Rng64::new(3);
        let p1 = point(4, 4, 1, &mut rng);
        let p2 = FixedRankPoint::new(
            DMatrix::from_element(4, 1, 0.5),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(4, 1, 0.5),
        )
        .unwrap();
        let x = random(4, 4, &mut rng);
        let (g1, g2) = grad_phi(&x, &p1, &p2).unwrap();
        assert_eq!(g1.norm(), 0.0);
        assert!((g2 + x.component_mul(&p1.to_dense())).norm() < 1e-14);
    }

    #[test]
    fn hessian_action_zero_symmetric_and_finite_difference() {
        let mut rng = Rng64::new(4);
        let p1 = point(5, 4, 2, &mut rng);
        let p2 = point(5, 4, 2, &mut rng);
        let x = random(5, 4, &mut rng);
        let z = DMatrix::zeros(5, 4);
        let (a0, b0) = hess_phi_action(&x, &p1, &p2, &z, &z).unwrap();
        assert_eq!(a0.norm() + b0.norm(), 0.0);

        let (a, b, c, d) = (
            random(5, 4, &mut rng),
            random(5, 4, &mut rng),
            random(5, 4, &mut rng),
            random(5, 4, &mut rng),
        );
        let (ha, hb) = hess_phi_action(&x, &p1, &p2, &a, &b).unwrap();
        let (hc, hd) = hess_phi_action(&x, &p1, &p2, &c, &d).unwrap();
        let lhs = ha.dot(&c) + hb.dot(&d);
        let rhs = a.dot(&hc) + b.dot(&hd);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));

        let (d1, d2) = (p1.to_dense(), p2.to_dense());
        let eps = 1e-6;
        let (g1, g2) = grad_phi_dense(&x, &d1, &d2);
        let (f1, f2) = grad_phi_dense(&x, &(&d1 + &a * eps), &(&d2 + &b * eps));
        let fd = ((f1 - g1) / eps, (f2 - g2) / eps);
        let scale = (ha.norm_squared() + hb.norm_squared()).sqrt();
        let diff = ((&fd.0 - &ha).norm_squared() + (&fd.1 - &hb).norm_squared()).sqrt();
        assert!(diff <= 1e-4 * scale);
    }

    #[test]
    fn tangent_projector_is_idempotent_and_self_adjoint() {
        let mut rng = Rng64::new(5);
        let p = point(9, 7, 3, &mut rng);
        let a = random(9, 7, &mut rng);
        let b = random(9, 7, &mut rng);
        let pa = p.tangent_project(&a);
        assert!((p.tangent_project(&pa) - &pa).norm() < 1e-12);
        assert!((pa.dot(&b) - a.dot(&p.tangent_project(&b))).abs() < 1e-12);
        let xi = TangentVector::new(&p, &a);
        assert!((xi.to_dense(&p) - pa).norm() < 1e-12);
    }

    #[test]
    fn retraction_at_zero_step_is_identity_and_keeps_rank() {
        let mut rng = Rng64::new(6);
        let p = point(9, 7, 3, &mut rng);
        let xi = TangentVector::new(&p, &random(9, 7, &mut rng));
        assert!((retract(&p, &xi, 0.0).to_dense() - p.to_dense()).norm() < 1e-12);
        let q = retract(&p, &xi, 0.3);
        let sv = crate::svd::singular_values(&q.to_dense());
        assert!(sv[2] > 1e-9 * sv[0]);
        // the retraction is the best rank-3 approximation of X − tξ
        let target = p.to_dense() - xi.to_dense(&p) * 0.3;
        let full = crate::svd::singular_values(&target);
        let tail: f64 = full.iter().skip(3).map(|s| s * s).sum::<f64>().sqrt();
        assert!(((target - q.to_dense()).norm() - tail).abs() < 1e-10);
    }

    #[test]
    fn rank_one_positive_data_is_recovered() {
        let mut rng = Rng64::new(7);
        let u = DMatrix::from_fn(10, 1, |_, _| 0.5 + rng.uniform());
        let v = DMatrix::from_fn(8, 1, |_, _| 0.5 + rng.uniform());
        let x = &u * v.transpose();
        let init = HadamardFactors::new(
            DMatrix::from_fn(10, 1, |_, _| 0.5 + rng.uniform()),
            DMatrix::from_fn(8, 1, |_, _| 0.5 + rng.uniform()),
            DMatrix::from_fn(10, 1, |_, _| 0.5 + rng.uniform()),
            DMatrix::from_fn(8, 1, |_, _| 0.5 + rng.uniform()),
        )
        .unwrap();
        let cfg = SolverConfig { max_iters: 5000, tol: 1e-9, ..SolverConfig::default() };
        let rec = rgd_standard(&MatrixHandle::Dense(x.clone()), 1, &init, &cfg).unwrap();
        assert!(rec.best_error <= 1e-8, "error {}", rec.best_error);
        assert!(rec.is_monotone());
        let direct = rec.factors.relative_error(&MatrixHandle::Dense(x)).unwrap();
        assert!(direct <= 1e-8);
    }
}
