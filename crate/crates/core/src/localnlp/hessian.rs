use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::network::RegionModel;
use crate::topology::Formulation;

/// Smallest eigenvalue of every matrix handed out.
pub const DELTA_MIN: f64 = 1e-6;
const LBFGS_MEMORY: usize = 10;
const SKIP_RATIO: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMethod {
    FiniteDiff,
    Bfgs,
    Lbfgs,
    GaussNewton,
}

impl HessianMethod {
    pub const ALL: [HessianMethod; 4] = [
        HessianMethod::GaussNewton,
        HessianMethod::FiniteDiff,
        HessianMethod::Bfgs,
        HessianMethod::Lbfgs,
    ];
}

impl fmt::Display for HessianMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HessianMethod::FiniteDiff => "finite-diff",
            HessianMethod::Bfgs => "bfgs",
            HessianMethod::Lbfgs => "lbfgs",
            HessianMethod::GaussNewton => "gauss-newton",
        })
    }
}

impl FromStr for HessianMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-diff" | "fd" => Ok(HessianMethod::FiniteDiff),
            "bfgs" => Ok(HessianMethod::Bfgs),
            "lbfgs" | "l-bfgs" => Ok(HessianMethod::Lbfgs),
            "gauss-newton" | "gn" => Ok(HessianMethod::GaussNewton),
            other => Err(Error::Config(format!("unknown Hessian method '{other}'"))),
        }
    }
}

/// Gradient of `f + gamma^T g`, where `f = ||g||^2` in least-squares form
/// and `f = 0` in feasibility form.
pub fn lagrangian_gradient(
    model: &RegionModel,
    formulation: Formulation,
    chi: &DVector<f64>,
    gamma: &DVector<f64>,
) -> Result<DVector<f64>> {
    let jac = model.jacobian(chi)?;
    Ok(match formulation {
        Formulation::LeastSquares => jac.tr_mul(&model.residual(chi)?) * 2.0,
        Formulation::Feasibility => jac.tr_mul(gamma),
    })
}

/// Symmetrize and shift so that the smallest eigenvalue is at least
/// `delta_min`.
pub fn regularize(b: &DMatrix<f64>, delta_min: f64) -> DMatrix<f64> {
    let mut sym = (b + b.transpose()) * 0.5;
    let lowest = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    let shift = (delta_min - lowest).max(0.0);
    if shift > 0.0 {
        // a hair above the gap so rounding in the eigensolver cannot leave
        // the result just under the floor
        let shift = shift * (1.0 + 1e-10) + f64::EPSILON * sym.amax();
        for i in 0..sym.nrows() {
            sym[(i, i)] += shift;
        }
    }
    sym
}

/// Positive definite matrix that agrees with `b` on the null space of
/// `jac`: `b + c J^T J` for the smallest tried `c` that lifts the spectrum
/// above `delta_min`, with an eigenvalue shift as the last resort.
pub fn regularize_on_nullspace(b: &DMatrix<f64>, jac: &DMatrix<f64>, delta_min: f64) -> DMatrix<f64> {
    let sym = (b + b.transpose()) * 0.5;
    let n = sym.nrows();
    let floor = DMatrix::identity(n, n) * delta_min;
    let pd = |m: &DMatrix<f64>| (m - &floor).cholesky().is_some();
    if pd(&sym) {
        return sym;
    }
    if jac.nrows() > 0 {
        let jtj = jac.tr_mul(jac);
        let unit = sym.amax().max(1.0) / jtj.amax().max(f64::MIN_POSITIVE);
        let mut c = unit;
        for _ in 0..8 {
            let lifted = &sym + &jtj * c;
            if pd(&lifted) {
                return lifted;
            }
            c *= 10.0;
        }
        return regularize(&(&sym + jtj * c), delta_min);
    }
    regularize(&sym, delta_min)
}

/// Per-region Hessian approximation with its memory.
#[derive(Clone, Debug)]
pub struct HessianApprox {
    pub method: HessianMethod,
    pub delta_min: f64,
    estimate: Option<DMatrix<f64>>,
    pairs: VecDeque<(DVector<f64>, DVector<f64>)>,
    previous: Option<DVector<f64>>,
}

impl HessianApprox {
    pub fn new(method: HessianMethod) -> Self {
        HessianApprox {
            method,
            delta_min: DELTA_MIN,
            estimate: None,
            pairs: VecDeque::new(),
            previous: None,
        }
    }

    /// Secant pairs currently stored (limited-memory variant).
    pub fn memory_len(&self) -> usize {
        self.pairs.len()
    }

    /// Offer a secant pair `(s, y)`; it is skipped unless
    /// `s^T y > 1e-8 |s| |y|`. Returns whether it was used.
    pub fn observe(&mut self, s: &DVector<f64>, y: &DVector<f64>) -> bool {
        let sy = s.dot(y);
        if !(sy > SKIP_RATIO * s.norm() * y.norm()) {
            return false;
        }
        match self.method {
            HessianMethod::Bfgs => {
                let b = self
                    .estimate
                    .take()
                    .unwrap_or_else(|| DMatrix::identity(s.len(), s.len()) * (y.norm_squared() / sy));
                self.estimate = Some(bfgs_update(&b, s, y));
            }
            HessianMethod::Lbfgs => {
                if self.pairs.len() == LBFGS_MEMORY {
                    self.pairs.pop_front();
                }
                self.pairs.push_back((s.clone(), y.clone()));
            }
            HessianMethod::FiniteDiff | HessianMethod::GaussNewton => return false,
        }
        true
    }

    /// Feed the iterates of a local solve as secant pairs, with gradients of
    /// the Lagrangian evaluated at the given multipliers.
    pub fn observe_path(
        &mut self,
        model: &RegionModel,
        formulation: Formulation,
        path: &[DVector<f64>],
        gamma: &DVector<f64>,
    ) -> Result<()> {
        if !matches!(self.method, HessianMethod::Bfgs | HessianMethod::Lbfgs) || path.len() < 2 {
            return Ok(());
        }
        let mut grad_prev = lagrangian_gradient(model, formulation, &path[0], gamma)?;
        for w in path.windows(2) {
            let grad = lagrangian_gradient(model, formulation, &w[1], gamma)?;
            self.observe(&(&w[1] - &w[0]), &(&grad - &grad_prev));
            grad_prev = grad;
        }
        Ok(())
    }

    /// Approximate `Hessian(f + gamma^T g)` at `chi`, made positive definite
    /// by [`regularize`].
    pub fn compute(
        &mut self,
        model: &RegionModel,
        formulation: Formulation,
        chi: &DVector<f64>,
        gamma: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let raw = self.raw(model, formulation, chi, gamma)?;
        Ok(match self.method {
            HessianMethod::GaussNewton => raw,
            _ => regularize(&raw, self.delta_min),
        })
    }

    /// Like [`HessianApprox::compute`], but regularized through
    /// [`regularize_on_nullspace`] so that the curvature along `jac`'s null
    /// space is kept.
    pub fn compute_constrained(
        &mut self,
        model: &RegionModel,
        formulation: Formulation,
        chi: &DVector<f64>,
        gamma: &DVector<f64>,
        jac: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let raw = self.raw(model, formulation, chi, gamma)?;
        Ok(match self.method {
            HessianMethod::GaussNewton => raw,
            _ => regularize_on_nullspace(&raw, jac, self.delta_min),
        })
    }

    /// The estimate before regularization. The quasi-Newton variants first
    /// absorb the secant pair between the previous call's point and `chi`;
    /// without any history they start from finite differences at `chi`.
    pub fn raw(
        &mut self,
        model: &RegionModel,
        formulation: Formulation,
        chi: &DVector<f64>,
        gamma: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let n = model.n_state();
        let b = match self.method {
            HessianMethod::GaussNewton => {
                if formulation == Formulation::Feasibility {
                    return Err(Error::GaussNewtonFeasibility);
                }
                let jac = model.jacobian(chi)?;
                let mut b = jac.tr_mul(&jac) * 2.0;
                for i in 0..n {
                    b[(i, i)] += self.delta_min;
                }
                b
            }
            HessianMethod::FiniteDiff => finite_difference(model, formulation, chi, gamma)?,
            HessianMethod::Bfgs | HessianMethod::Lbfgs => {
                if let Some(prev) = self.previous.take() {
                    let s = chi - &prev;
                    let y = lagrangian_gradient(model, formulation, chi, gamma)?
                        - lagrangian_gradient(model, formulation, &prev, gamma)?;
                    self.observe(&s, &y);
                }
                self.previous = Some(chi.clone());
                if self.estimate.is_none() {
                    // seed with the regularized finite-difference Hessian at
                    // the first point; an identity start is far off in scale
                    let seed = finite_difference(model, formulation, chi, gamma)?;
                    self.estimate = Some(regularize(&seed, self.delta_min));
                }
                if self.method == HessianMethod::Bfgs {
                    self.estimate.clone().unwrap_or_else(|| DMatrix::identity(n, n))
                } else {
                    self.compact(n)
                }
            }
        };
        Ok(b)
    }

    /// Dense matrix equivalent of the stored limited-memory pairs applied to
    /// the seed matrix, or to a scaled identity when there is none.
    fn compact(&self, n: usize) -> DMatrix<f64> {
        let mut b = match (&self.estimate, self.pairs.back()) {
            (Some(seed), _) => seed.clone(),
            (None, Some((s, y))) => DMatrix::identity(n, n) * (y.norm_squared() / s.dot(y)),
            (None, None) => return DMatrix::identity(n, n),
        };
        for (s, y) in &self.pairs {
            b = bfgs_update(&b, s, y);
        }
        b
    }
}

/// `B + y y^T / y^T s - B s s^T B / s^T B s`.
pub fn bfgs_update(b: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let bs = b * s;
    let sbs = s.dot(&bs);
    let mut out = b.clone();
    out.ger(1.0 / y.dot(s), y, y, 1.0);
    if sbs > 0.0 {
        out.ger(-1.0 / sbs, &bs, &bs, 1.0);
    }
    out
}

fn finite_difference(
    model: &RegionModel,
    formulation: Formulation,
    chi: &DVector<f64>,
    gamma: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = chi.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = chi.clone();
    for c in 0..n {
        let step = 1e-6 * chi[c].abs().max(1.0);
        probe[c] = chi[c] + step;
        let up = lagrangian_gradient(model, formulation, &probe, gamma)?;
        probe[c] = chi[c] - step;
        let down = lagrangian_gradient(model, formulation, &probe, gamma)?;
        probe[c] = chi[c];
        h.set_column(c, &((up - down) / (2.0 * step)));
    }
    Ok(h)
}
