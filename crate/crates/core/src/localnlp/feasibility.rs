use nalgebra::{DMatrix, DVector};

use super::{LocalObjective, LocalOptions, LocalSolution};
use crate::error::{Error, Result};
use crate::topology::Formulation;

const ARMIJO: f64 = 1e-4;
const MIN_ALPHA: f64 = 1e-12;
/// Relative stationarity accepted at the iteration limit for feasible points.
const STALL_KKT: f64 = 1e-6;

/// Newton-SQP for `min c^T chi + 1/2 |chi - zeta|_W^2  s.t.  g(chi) = 0`.
///
/// Each iteration solves the full KKT system with the exact Hessian of the
/// Lagrangian `f + gamma^T g` and backtracks on the l1 merit function
/// `f + pi |g|_1`. If the step is not a descent direction the Hessian is
/// shifted by a growing multiple of the identity.
pub fn solve_local_feasibility(
    obj: &LocalObjective,
    start: &DVector<f64>,
    opts: &LocalOptions,
) -> Result<LocalSolution> {
    if obj.formulation != Formulation::Feasibility {
        return Err(Error::Config(
            "feasibility solver called on a least-squares objective".into(),
        ));
    }
    let model = obj.model;
    model.check_state(start)?;
    let (n, m) = (model.n_state(), model.n_residual());
    let mut chi = start.clone();
    let mut gamma = DVector::zeros(m);
    let mut g = model.residual(&chi)?;
    let mut penalty: f64 = 1.0;
    let mut trail = vec![chi.clone()];
    let mut kkt_norm = f64::INFINITY;

    for iteration in 0..opts.max_iter {
        let jac = model.jacobian(&chi)?;
        let grad_f = obj.aug.gradient(&chi);
        let kkt = &grad_f + jac.tr_mul(&gamma);
        kkt_norm = kkt.amax();
        if g.amax() <= opts.tol && kkt_norm <= kkt_tolerance(obj, &jac, &gamma, &chi, opts.tol) {
            return Ok(solution(chi, gamma, iteration, kkt_norm, trail));
        }
        let mut hess = model.residual_hessian(&chi, &gamma)?;
        for i in 0..n {
            hess[(i, i)] += obj.aug.weight[i];
        }
        let mut shift = 0.0;
        let (step, gamma_next, slope) = loop {
            let (step, gamma_next) = kkt_solve(&hess, &jac, &grad_f, &g, shift)?;
            penalty = penalty.max(1.1 * gamma_next.amax() + 1.0);
            let g1 = g.lp_norm(1);
            let slope = grad_f.dot(&step) - penalty * g1;
            if slope < 0.0 || step.amax() <= 1e-15 * (1.0 + chi.amax()) {
                break (step, gamma_next, slope);
            }
            shift = if shift == 0.0 { 1e-8 * (1.0 + hess.amax()) } else { shift * 10.0 };
            if shift > 1e12 {
                return Err(Error::SingularMatrix("local KKT system"));
            }
        };
        if step.amax() <= 1e-15 * (1.0 + chi.amax()) {
            gamma = gamma_next;
            return finish_stalled(model, obj, chi, gamma, iteration, opts, trail);
        }
        let merit = |chi: &DVector<f64>, g: &DVector<f64>| obj.aug.value(chi) + penalty * g.lp_norm(1);
        let merit0 = merit(&chi, &g);
        let mut alpha = 1.0;
        loop {
            let trial = &chi + &step * alpha;
            let g_trial = model.residual(&trial)?;
            let accept = merit(&trial, &g_trial) <= merit0 + ARMIJO * alpha * slope.min(0.0)
                // near a solution the merit change drowns in rounding
                || (g_trial.amax() <= g.amax() && g_trial.amax() <= 1e3 * opts.tol && alpha == 1.0);
            if accept && g_trial.iter().all(|v| v.is_finite()) {
                chi = trial;
                g = g_trial;
                gamma = &gamma + (&gamma_next - &gamma) * alpha;
                trail.push(chi.clone());
                break;
            }
            alpha *= 0.5;
            if alpha < MIN_ALPHA {
                return finish_stalled(model, obj, chi, gamma_next, iteration, opts, trail);
            }
        }
    }
    let jac = model.jacobian(&chi)?;
    let grad_f = obj.aug.gradient(&chi);
    let kkt = (&grad_f + jac.tr_mul(&gamma)).amax();
    // a feasible point whose stationarity stalled just short of the target
    if g.amax() <= opts.tol && kkt <= STALL_KKT * kkt_tolerance(obj, &jac, &gamma, &chi, opts.tol) / opts.tol {
        return Ok(solution(chi, gamma, opts.max_iter, kkt, trail));
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        residual: g.amax().max(kkt_norm),
    })
}

/// `tol` relative to the gradient size, but never below the rounding noise
/// of evaluating `grad_f + J^T gamma`.
fn kkt_tolerance(obj: &LocalObjective, jac: &DMatrix<f64>, gamma: &DVector<f64>, chi: &DVector<f64>, tol: f64) -> f64 {
    let aug = &obj.aug;
    let mut noise: f64 = 0.0;
    for c in 0..chi.len() {
        let cross: f64 = jac.column(c).iter().zip(gamma.iter()).map(|(a, b)| (a * b).abs()).sum();
        let prox = aug.weight[c] * (chi[c].abs() + aug.center[c].abs()) + aug.linear[c].abs();
        noise = noise.max(cross + prox);
    }
    (tol * obj.aug.gradient(chi).amax().max(1.0)).max(1e2 * f64::EPSILON * noise)
}

/// Solve `[H + shift I, J^T; J, 0] (d, gamma) = (-grad_f, -g)`.
fn kkt_solve(
    hess: &DMatrix<f64>,
    jac: &DMatrix<f64>,
    grad_f: &DVector<f64>,
    g: &DVector<f64>,
    shift: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (hess.nrows(), jac.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(hess);
    for i in 0..n {
        k[(i, i)] += shift;
    }
    k.view_mut((n, 0), (m, n)).copy_from(jac);
    k.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-grad_f));
    rhs.rows_mut(n, m).copy_from(&(-g));
    let sol = k
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularMatrix("local KKT system"))?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

fn solution(chi: DVector<f64>, gamma: DVector<f64>, iterations: usize, kkt: f64, trail: Vec<DVector<f64>>) -> LocalSolution {
    LocalSolution {
        chi,
        gamma,
        iterations,
        stationarity: kkt,
        trail,
    }
}

/// A vanishing step or failed line search: accept if the point is feasible.
fn finish_stalled(
    model: &crate::network::RegionModel,
    obj: &LocalObjective,
    chi: DVector<f64>,
    gamma: DVector<f64>,
    iteration: usize,
    opts: &LocalOptions,
    trail: Vec<DVector<f64>>,
) -> Result<LocalSolution> {
    let g = model.residual(&chi)?;
    let jac = model.jacobian(&chi)?;
    let kkt = (obj.aug.gradient(&chi) + jac.tr_mul(&gamma)).amax();
    if g.amax() <= opts.tol {
        Ok(solution(chi, gamma, iteration, kkt, trail))
    } else {
        Err(Error::LineSearchFailure {
            iterations: iteration,
            gradient: kkt,
        })
    }
}
