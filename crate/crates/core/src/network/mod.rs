//! Admittance matrices and polar power-flow evaluators.
//!
//! Angles are radians and powers are per unit everywhere in this module.

pub mod admittance;
pub mod model;

use nalgebra::DMatrix;

pub use admittance::{build_admittance, Admittance, C64};
pub use model::{BusSpec, CopyBus, LocalBranch, RegionModel, RegionState};

/// Net injection `(P_j, Q_j)` at bus `j` computed from the voltages.
pub fn bus_power(y: &Admittance, theta: &[f64], v: &[f64], j: usize) -> (f64, f64) {
    let (mut p, mut q) = (0.0, 0.0);
    for &(k, yjk) in y.row(j) {
        let (s, c) = (theta[j] - theta[k]).sin_cos();
        p += v[k] * (yjk.re * c + yjk.im * s);
        q += v[k] * (yjk.re * s - yjk.im * c);
    }
    (v[j] * p, v[j] * q)
}

/// Row/column placement of power-flow derivatives inside a larger matrix.
///
/// `p_row[j]`/`q_row[j]` give the rows of the active/reactive balance of
/// equation bus `j` (only buses `0..p_row.len()` carry equations);
/// `theta_col[k]`/`v_col[k]` give the state columns of bus `k`, or `None`
/// when that quantity is held fixed.
pub(crate) struct Placement<'a> {
    pub p_row: &'a [Option<usize>],
    pub q_row: &'a [Option<usize>],
    pub theta_col: &'a [Option<usize>],
    pub v_col: &'a [Option<usize>],
}

/// Write d(P, Q)/d(theta, v) into `out` according to `at`.
pub(crate) fn fill_power_jacobian(y: &Admittance, theta: &[f64], v: &[f64], at: &Placement, out: &mut DMatrix<f64>) {
    for j in 0..at.p_row.len() {
        let (pr, qr) = (at.p_row[j], at.q_row[j]);
        if pr.is_none() && qr.is_none() {
            continue;
        }
        let (mut sp, mut sq) = (0.0, 0.0);
        for &(k, yjk) in y.row(j) {
            if k == j {
                continue;
            }
            let (s, c) = (theta[j] - theta[k]).sin_cos();
            let gc_bs = yjk.re * c + yjk.im * s;
            let gs_bc = yjk.re * s - yjk.im * c;
            sp += v[k] * gc_bs;
            sq += v[k] * gs_bc;
            if let Some(r) = pr {
                if let Some(col) = at.theta_col[k] {
                    out[(r, col)] += v[j] * v[k] * gs_bc;
                }
                if let Some(col) = at.v_col[k] {
                    out[(r, col)] += v[j] * gc_bs;
                }
            }
            if let Some(r) = qr {
                if let Some(col) = at.theta_col[k] {
                    out[(r, col)] -= v[j] * v[k] * gc_bs;
                }
                if let Some(col) = at.v_col[k] {
                    out[(r, col)] += v[j] * gs_bc;
                }
            }
        }
        let yjj = y.get(j, j);
        if let Some(r) = pr {
            if let Some(col) = at.theta_col[j] {
                out[(r, col)] += -v[j] * sq;
            }
            if let Some(col) = at.v_col[j] {
                out[(r, col)] += sp + 2.0 * yjj.re * v[j];
            }
        }
        if let Some(r) = qr {
            if let Some(col) = at.theta_col[j] {
                out[(r, col)] += v[j] * sp;
            }
            if let Some(col) = at.v_col[j] {
                out[(r, col)] += sq - 2.0 * yjj.im * v[j];
            }
        }
    }
}

/// Add the Hessian of `sum_j a_j P_j + c_j Q_j` with respect to
/// `(theta, v)` into `out`. Equation buses are `0..a.len()`.
pub(crate) fn add_power_hessian(
    y: &Admittance,
    theta: &[f64],
    v: &[f64],
    a: &[f64],
    c: &[f64],
    theta_col: &[Option<usize>],
    v_col: &[Option<usize>],
    out: &mut DMatrix<f64>,
) {
    let mut put = |r: Option<usize>, col: Option<usize>, value: f64| {
        if let (Some(r), Some(col)) = (r, col) {
            out[(r, col)] += value;
            if r != col {
                out[(col, r)] += value;
            }
        }
    };
    for j in 0..a.len() {
        let (aj, cj) = (a[j], c[j]);
        if aj == 0.0 && cj == 0.0 {
            continue;
        }
        let (tj, uj) = (theta_col[j], v_col[j]);
        for &(k, yjk) in y.row(j) {
            if k == j {
                continue;
            }
            let (s, co) = (theta[j] - theta[k]).sin_cos();
            let (g, b) = (yjk.re, yjk.im);
            let h = aj * (g * co + b * s) + cj * (g * s - b * co);
            let hp = aj * (-g * s + b * co) + cj * (g * co + b * s);
            let (tk, uk) = (theta_col[k], v_col[k]);
            let vv = v[j] * v[k];
            put(tj, tj, -vv * h);
            put(tk, tk, -vv * h);
            put(tj, tk, vv * h);
            put(tj, uj, v[k] * hp);
            put(tj, uk, v[j] * hp);
            put(tk, uj, -v[k] * hp);
            put(tk, uk, -v[j] * hp);
            put(uj, uk, h);
        }
        let yjj = y.get(j, j);
        put(uj, uj, 2.0 * (aj * yjj.re - cj * yjj.im));
    }
}
