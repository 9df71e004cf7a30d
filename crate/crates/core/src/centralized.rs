//! Newton-Raphson power flow on a single case, used as the reference
//! solution for distributed runs.
//!
//! Standard polar formulation: unknowns are the angles of all non-slack
//! buses and the magnitudes of PQ buses; equations are the active balances
//! of non-slack buses and the reactive balances of PQ buses. Reactive
//! limits of PV buses are not enforced.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::casefile::{BusType, CaseData};
use crate::error::{Error, Result};
use crate::network::{build_admittance, bus_power, fill_power_jacobian, BusSpec, Placement};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PfSolution {
    pub bus_ids: Vec<usize>,
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
    /// Net injections in p.u.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
    /// Mismatch infinity norm before each update and at the end.
    pub history: Vec<f64>,
}

pub fn solve_newton_raphson(case: &CaseData, tol: f64, max_iter: usize) -> Result<PfSolution> {
    let y = build_admittance(case)?;
    let specs = BusSpec::from_case(case);
    let n = case.buses.len();
    let mut theta: Vec<f64> = case.buses.iter().map(|b| b.va.to_radians()).collect();
    let mut v: Vec<f64> = case.buses.iter().map(|b| b.vm).collect();
    let (mut p_target, mut q_target) = (vec![0.0; n], vec![0.0; n]);
    for (j, s) in specs.iter().enumerate() {
        match s.kind {
            BusType::Slack => {
                v[j] = s.first;
                theta[j] = s.second;
            }
            BusType::Pv => {
                p_target[j] = s.first;
                v[j] = s.second;
            }
            BusType::Pq => {
                p_target[j] = s.first;
                q_target[j] = s.second;
            }
        }
    }
    let mut theta_col = vec![None; n];
    let mut v_col = vec![None; n];
    let mut n_unknown = 0;
    for (j, s) in specs.iter().enumerate() {
        if s.kind != BusType::Slack {
            theta_col[j] = Some(n_unknown);
            n_unknown += 1;
        }
    }
    for (j, s) in specs.iter().enumerate() {
        if s.kind == BusType::Pq {
            v_col[j] = Some(n_unknown);
            n_unknown += 1;
        }
    }
    // equations mirror unknowns: P rows where theta is free, Q rows where v is
    let at = Placement {
        p_row: &theta_col,
        q_row: &v_col,
        theta_col: &theta_col,
        v_col: &v_col,
    };

    let mismatch = |theta: &[f64], v: &[f64]| {
        let mut f = DVector::zeros(n_unknown);
        for j in 0..n {
            if theta_col[j].is_none() && v_col[j].is_none() {
                continue;
            }
            let (p, q) = bus_power(&y, theta, v, j);
            if let Some(r) = theta_col[j] {
                f[r] = p - p_target[j];
            }
            if let Some(r) = v_col[j] {
                f[r] = q - q_target[j];
            }
        }
        f
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let f = mismatch(&theta, &v);
        let norm = if f.is_empty() { 0.0 } else { f.amax() };
        history.push(norm);
        if !norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        if norm <= tol {
            break;
        }
        if iterations == max_iter {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        let mut jac = DMatrix::zeros(n_unknown, n_unknown);
        fill_power_jacobian(&y, &theta, &v, &at, &mut jac);
        let dx = jac
            .lu()
            .solve(&(-f))
            .ok_or(Error::SingularMatrix("Newton-Raphson Jacobian"))?;
        for j in 0..n {
            if let Some(c) = theta_col[j] {
                theta[j] += dx[c];
            }
            if let Some(c) = v_col[j] {
                v[j] += dx[c];
            }
        }
        iterations += 1;
    }

    let (p, q): (Vec<f64>, Vec<f64>) = (0..n).map(|j| bus_power(&y, &theta, &v, j)).unzip();
    Ok(PfSolution {
        bus_ids: case.buses.iter().map(|b| b.bus_id).collect(),
        vm: v,
        va: theta,
        p,
        q,
        iterations,
        mismatch: *history.last().expect("at least one evaluation"),
        history,
    })
}
