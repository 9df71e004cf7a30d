use nalgebra::{DMatrix, DVector};

use super::{LocalObjective, LocalOptions, LocalSolution};
use crate::error::{Error, Result};
use crate::topology::Formulation;

const MU_START: f64 = 1e-4;
const MU_MAX: f64 = 1e12;
/// A stalled search counts as converged when the model decrease of the
/// first trial step is below this fraction of `1 + ||g||^2`: the objective
/// cannot resolve such a change.
const STALL_DECREASE: f64 = 1e-14;

/// Levenberg-damped Gauss-Newton on `||g||^2` plus the augmentation.
///
/// Steps solve `(2 J^T J + W + mu I) d = -grad` and are accepted only when
/// the objective does not increase; `mu` is divided by ten after an accepted
/// step and multiplied by ten after a rejected one.
pub fn solve_local_least_squares(
    obj: &LocalObjective,
    start: &DVector<f64>,
    opts: &LocalOptions,
) -> Result<LocalSolution> {
    if obj.formulation != Formulation::LeastSquares {
        return Err(Error::Config(
            "least-squares solver called on a feasibility objective".into(),
        ));
    }
    let model = obj.model;
    model.check_state(start)?;
    let n = model.n_state();
    let mut chi = start.clone();
    let mut f = model.residual(&chi)?;
    let mut mu = MU_START;
    let mut trail = vec![chi.clone()];
    let mut grad_norm = f64::INFINITY;
    for iteration in 0..opts.max_iter {
        let jac = model.jacobian(&chi)?;
        let grad = jac.tr_mul(&f) * 2.0 + obj.aug.gradient(&chi);
        grad_norm = grad.amax();
        if grad_norm <= opts.tol {
            return Ok(done(model.n_residual(), chi, iteration, grad_norm, trail));
        }
        let mut h = jac.tr_mul(&jac) * 2.0;
        for i in 0..n {
            h[(i, i)] += obj.aug.weight[i];
        }
        let mut resolvable = None;
        loop {
            let step = damped_step(&h, &grad, mu)?;
            // for the damped step -grad^T d / 2 is the model decrease
            let resolvable =
                *resolvable.get_or_insert(-0.5 * grad.dot(&step) > STALL_DECREASE * (1.0 + f.norm_squared()));
            if step.amax() <= 1e-15 * (1.0 + chi.amax()) {
                return stalled(model.n_residual(), chi, iteration, grad_norm, resolvable, trail);
            }
            let trial = &chi + &step;
            let f_trial = model.residual(&trial)?;
            let change = f_trial
                .iter()
                .zip(f.iter())
                .map(|(a, b)| (a - b) * (a + b))
                .sum::<f64>()
                + obj.aug.change(&chi, &step);
            if change <= 0.0 && f_trial.iter().all(|v| v.is_finite()) {
                chi = trial;
                f = f_trial;
                mu = (mu / 10.0).max(1e-20);
                trail.push(chi.clone());
                break;
            }
            mu *= 10.0;
            if mu > MU_MAX {
                return stalled(model.n_residual(), chi, iteration, grad_norm, resolvable, trail);
            }
        }
    }
    let jac = model.jacobian(&chi)?;
    let grad = jac.tr_mul(&f) * 2.0 + obj.aug.gradient(&chi);
    if grad.amax() <= opts.tol {
        return Ok(done(model.n_residual(), chi, opts.max_iter, grad.amax(), trail));
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        residual: grad_norm.min(grad.amax()),
    })
}

fn damped_step(h: &DMatrix<f64>, grad: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let mut mu = mu;
    loop {
        let mut a = h.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += mu;
        }
        if let Some(chol) = a.cholesky() {
            return Ok(chol.solve(&(-grad)));
        }
        mu *= 10.0;
        if mu > MU_MAX {
            return Err(Error::SingularMatrix("damped Gauss-Newton system"));
        }
    }
}

fn done(m: usize, chi: DVector<f64>, iterations: usize, stationarity: f64, trail: Vec<DVector<f64>>) -> LocalSolution {
    LocalSolution {
        chi,
        gamma: DVector::zeros(m),
        iterations,
        stationarity,
        trail,
    }
}

fn stalled(
    m: usize,
    chi: DVector<f64>,
    iterations: usize,
    grad_norm: f64,
    resolvable: bool,
    trail: Vec<DVector<f64>>,
) -> Result<LocalSolution> {
    if !resolvable {
        Ok(done(m, chi, iterations, grad_norm, trail))
    } else {
        Err(Error::LineSearchFailure {
            iterations,
            gradient: grad_norm,
        })
    }
}
