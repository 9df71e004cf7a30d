//! Local subproblems of the distributed algorithms and the Hessian
//! approximations handed to the coordinator.
//!
//! Every local problem has the shape
//!
//! ```text
//! min  f(chi) + c^T chi + 1/2 (chi - zeta)^T W (chi - zeta)     [s.t. g(chi) = 0]
//! ```
//!
//! with `W` diagonal. In least-squares form `f = ||g||^2` and there are no
//! constraints; in feasibility form `f = 0` and `g(chi) = 0` is imposed.

pub mod feasibility;
pub mod hessian;
pub mod least_squares;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::RegionModel;
use crate::topology::Formulation;

pub use feasibility::solve_local_feasibility;
pub use hessian::{lagrangian_gradient, regularize, regularize_on_nullspace, HessianApprox, HessianMethod, DELTA_MIN};
pub use least_squares::solve_local_least_squares;

/// Linear and diagonal proximal terms added to a local objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmentation {
    pub linear: DVector<f64>,
    /// Diagonal of `W`.
    pub weight: DVector<f64>,
    pub center: DVector<f64>,
}

impl Augmentation {
    pub fn none(n: usize) -> Self {
        Augmentation {
            linear: DVector::zeros(n),
            weight: DVector::zeros(n),
            center: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn value(&self, chi: &DVector<f64>) -> f64 {
        let mut v = self.linear.dot(chi);
        for i in 0..chi.len() {
            let d = chi[i] - self.center[i];
            v += 0.5 * self.weight[i] * d * d;
        }
        v
    }

    pub fn gradient(&self, chi: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(chi.len(), |i, _| {
            self.linear[i] + self.weight[i] * (chi[i] - self.center[i])
        })
    }

    /// `value(chi + step) - value(chi)` without cancellation against the
    /// constant parts.
    pub fn change(&self, chi: &DVector<f64>, step: &DVector<f64>) -> f64 {
        let mut v = self.linear.dot(step);
        for i in 0..chi.len() {
            let d = chi[i] - self.center[i];
            v += self.weight[i] * step[i] * (d + 0.5 * step[i]);
        }
        v
    }
}

#[derive(Clone, Debug)]
pub struct LocalObjective<'a> {
    pub model: &'a RegionModel,
    pub formulation: Formulation,
    pub aug: Augmentation,
}

impl<'a> LocalObjective<'a> {
    pub fn new(model: &'a RegionModel, formulation: Formulation, aug: Augmentation) -> Result<Self> {
        if aug.len() != model.n_state() {
            return Err(Error::DimensionMismatch {
                expected: model.n_state(),
                found: aug.len(),
            });
        }
        Ok(LocalObjective {
            model,
            formulation,
            aug,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalOptions {
    /// Stationarity tolerance (and feasibility tolerance in feasibility form).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalSolution {
    pub chi: DVector<f64>,
    /// Constraint multipliers (zero in least-squares form).
    pub gamma: DVector<f64>,
    pub iterations: usize,
    /// Final gradient (or KKT residual) infinity norm.
    pub stationarity: f64,
    /// Accepted iterates, starting point first.
    pub trail: Vec<DVector<f64>>,
}

/// Dispatch on the objective's formulation.
pub fn solve_local(obj: &LocalObjective, start: &DVector<f64>, opts: &LocalOptions) -> Result<LocalSolution> {
    match obj.formulation {
        Formulation::LeastSquares => solve_local_least_squares(obj, start, opts),
        Formulation::Feasibility => solve_local_feasibility(obj, start, opts),
    }
}
