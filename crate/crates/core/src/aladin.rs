//! ALADIN over a [`DistProblem`]: parallel local solves, sensitivity
//! collection, a coupled equality-constrained QP and the primal/dual update.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::admm::region_consensus;
use crate::error::{Error, Result};
use crate::localnlp::{lagrangian_gradient, solve_local, Augmentation, HessianApprox, HessianMethod, LocalObjective, LocalOptions};
use crate::topology::{ConsensusBlock, DistProblem, Formulation};
use crate::trace::{IterationTrace, RunOutcome, Termination, TraceRow, GLOBAL_ROW};

/// Where the consensus residual of the multiplier update is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualUpdate {
    /// `lambda + rho (sum_i A_i chi_i - b)` at the local solutions.
    Literal,
    /// `lambda + rho (sum_i A_i (chi_i + dchi_i) - b)`, which equals the
    /// multiplier of the coordination QP.
    Coordinated,
}

impl fmt::Display for DualUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DualUpdate::Literal => "literal",
            DualUpdate::Coordinated => "coordinated",
        })
    }
}

impl FromStr for DualUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(DualUpdate::Literal),
            "coordinated" | "qp" => Ok(DualUpdate::Coordinated),
            other => Err(Error::Config(format!("unknown dual update '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AladinConfig {
    pub rho: f64,
    pub nu: f64,
    /// Diagonal scaling per region; `None` means identity.
    pub sigma: Option<Vec<DVector<f64>>>,
    pub hessian: HessianMethod,
    pub max_iter: usize,
    pub tol: f64,
    pub local: LocalOptions,
    pub zeta0: Option<Vec<DVector<f64>>>,
    pub lambda0: Option<DVector<f64>>,
    pub lambda_fill: f64,
    /// Right-hand side of the coupling constraint; `None` means zero.
    pub b: Option<DVector<f64>>,
    pub dual_update: DualUpdate,
}

impl Default for AladinConfig {
    fn default() -> Self {
        AladinConfig {
            rho: 1e4,
            nu: 1e4,
            sigma: None,
            hessian: HessianMethod::GaussNewton,
            max_iter: 30,
            tol: 1e-10,
            local: LocalOptions::default(),
            zeta0: None,
            lambda0: None,
            lambda_fill: 0.01,
            b: None,
            dual_update: DualUpdate::Coordinated,
        }
    }
}

impl AladinConfig {
    pub fn validate(&self, problem: &DistProblem) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("nu", self.nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.hessian == HessianMethod::GaussNewton && problem.formulation == Formulation::Feasibility {
            return Err(Error::GaussNewtonFeasibility);
        }
        if let Some(sigma) = &self.sigma {
            if sigma.len() != problem.n_regions() {
                return Err(Error::DimensionMismatch {
                    expected: problem.n_regions(),
                    found: sigma.len(),
                });
            }
            for (s, model) in sigma.iter().zip(&problem.regions) {
                if s.len() != model.n_state() {
                    return Err(Error::DimensionMismatch {
                        expected: model.n_state(),
                        found: s.len(),
                    });
                }
                if s.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Config("scaling matrices must be positive definite".into()));
                }
            }
        }
        for v in [&self.lambda0, &self.b].into_iter().flatten() {
            if v.len() != problem.n_rows() {
                return Err(Error::DimensionMismatch {
                    expected: problem.n_rows(),
                    found: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// Local derivative information sent to the coordinator.
#[derive(Clone, Debug)]
pub struct Sensitivity {
    /// Objective gradient.
    pub gradient: DVector<f64>,
    /// Positive definite Hessian approximation of the local Lagrangian.
    pub hessian: DMatrix<f64>,
    /// Constraint Jacobian; zero rows in least-squares form.
    pub jacobian: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct SensitivityPack {
    pub regions: Vec<Sensitivity>,
}

#[derive(Clone, Debug)]
pub struct CoordinationStep {
    pub delta: Vec<DVector<f64>>,
    /// Multiplier of the coupling: `lambda + rho (sum A (chi + delta) - b)`.
    pub consensus_dual: DVector<f64>,
    /// Multipliers of the linearized local constraints.
    pub local_duals: Vec<DVector<f64>>,
}

/// Solve
///
/// ```text
/// min  sum_i 1/2 d_i^T B_i d_i + grad_i^T d_i + lambda^T (r + sum_i A_i d_i)
///      + rho/2 |r + sum_i A_i d_i|^2     s.t.  J_i d_i = 0,
/// ```
///
/// with `r = sum_i A_i chi_i - b`, by eliminating each region through its
/// own KKT system and solving the reduced system for the coupling
/// multiplier `w`:
/// `(I / rho + sum_i A_i M_i A_i^T) w = lambda / rho + r - sum_i A_i M_i grad_i`.
pub fn aladin_coordination_qp(
    pack: &SensitivityPack,
    chi: &[DVector<f64>],
    lambda: &DVector<f64>,
    rho: f64,
    blocks: &[ConsensusBlock],
    b: Option<&DVector<f64>>,
) -> Result<CoordinationStep> {
    let n_reg = blocks.len();
    if pack.regions.len() != n_reg || chi.len() != n_reg {
        return Err(Error::DimensionMismatch {
            expected: n_reg,
            found: pack.regions.len().min(chi.len()),
        });
    }
    let n_rows = blocks.first().map(|b| b.n_rows).unwrap_or(0);
    if lambda.len() != n_rows {
        return Err(Error::DimensionMismatch {
            expected: n_rows,
            found: lambda.len(),
        });
    }
    for ((s, block), x) in pack.regions.iter().zip(blocks).zip(chi) {
        let n = block.n_cols;
        if x.len() != n || s.gradient.len() != n || s.hessian.shape() != (n, n) || s.jacobian.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s.gradient.len(),
            });
        }
    }

    // per region: X = K^{-1} [grad, A^T; 0, 0], rows 0..n are M [grad, A^T]
    let solves: Vec<Result<DMatrix<f64>>> = pack
        .regions
        .par_iter()
        .zip(blocks.par_iter())
        .map(|(s, block)| {
            let n = block.n_cols;
            let m = s.jacobian.nrows();
            let mut rhs = DMatrix::zeros(n + m, 1 + n_rows);
            rhs.view_mut((0, 0), (n, 1)).copy_from(&s.gradient);
            for &(r, c, sign) in &block.entries {
                rhs[(c, 1 + r)] += sign;
            }
            if m == 0 {
                if let Some(chol) = s.hessian.clone().cholesky() {
                    return Ok(chol.solve(&rhs));
                }
            }
            let mut k = DMatrix::zeros(n + m, n + m);
            k.view_mut((0, 0), (n, n)).copy_from(&s.hessian);
            k.view_mut((n, 0), (m, n)).copy_from(&s.jacobian);
            k.view_mut((0, n), (n, m)).copy_from(&s.jacobian.transpose());
            k.lu()
                .solve(&rhs)
                .filter(|x| x.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularMatrix("coordination KKT system"))
        })
        .collect();
    let solves: Vec<DMatrix<f64>> = solves.into_iter().collect::<Result<_>>()?;

    let mut residual = crate::topology::consensus::consensus_residual(blocks, chi);
    if let Some(b) = b {
        residual -= b;
    }
    let mut schur = DMatrix::identity(n_rows, n_rows) / rho;
    let mut rhs = lambda / rho + &residual;
    for (x, block) in solves.iter().zip(blocks) {
        // A_i applied to the columns of M_i [grad, A_i^T]
        for &(r, c, sign) in &block.entries {
            rhs[r] -= sign * x[(c, 0)];
            for q in 0..n_rows {
                schur[(r, q)] += sign * x[(c, 1 + q)];
            }
        }
    }
    let w = schur
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| schur.lu().solve(&rhs))
        .filter(|w| w.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularMatrix("coordination Schur complement"))?;

    let mut combo = DVector::zeros(1 + n_rows);
    combo[0] = 1.0;
    combo.rows_mut(1, n_rows).copy_from(&w);
    let mut delta = Vec::with_capacity(n_reg);
    let mut local_duals = Vec::with_capacity(n_reg);
    for (x, block) in solves.iter().zip(blocks) {
        let full = -(x * &combo);
        let n = block.n_cols;
        delta.push(full.rows(0, n).into_owned());
        local_duals.push(full.rows(n, full.len() - n).into_owned());
    }
    Ok(CoordinationStep {
        delta,
        consensus_dual: w,
        local_duals,
    })
}

/// `zeta_i = chi_i + dchi_i` and the multiplier update selected by `mode`.
pub fn aladin_update(
    chi: &[DVector<f64>],
    delta: &[DVector<f64>],
    lambda: &DVector<f64>,
    rho: f64,
    blocks: &[ConsensusBlock],
    b: Option<&DVector<f64>>,
    mode: DualUpdate,
) -> (Vec<DVector<f64>>, DVector<f64>) {
    let zeta: Vec<DVector<f64>> = chi.iter().zip(delta).map(|(x, d)| x + d).collect();
    let at = match mode {
        DualUpdate::Literal => chi,
        DualUpdate::Coordinated => &zeta[..],
    };
    let mut residual = crate::topology::consensus::consensus_residual(blocks, at);
    if let Some(b) = b {
        residual -= b;
    }
    let next = lambda + residual * rho;
    (zeta, next)
}

/// Gradient, Hessian approximation and constraint Jacobian of one region.
pub fn region_sensitivity(
    model: &crate::network::RegionModel,
    formulation: Formulation,
    hessian: &mut HessianApprox,
    chi: &DVector<f64>,
    gamma: &DVector<f64>,
) -> Result<Sensitivity> {
    let n = model.n_state();
    Ok(match formulation {
        Formulation::LeastSquares => Sensitivity {
            gradient: lagrangian_gradient(model, formulation, chi, gamma)?,
            hessian: hessian.compute(model, formulation, chi, gamma)?,
            jacobian: DMatrix::zeros(0, n),
        },
        Formulation::Feasibility => {
            let jacobian = model.jacobian(chi)?;
            Sensitivity {
                gradient: DVector::zeros(n),
                hessian: hessian.compute_constrained(model, formulation, chi, gamma, &jacobian)?,
                jacobian,
            }
        }
    })
}

/// Variables carried between ALADIN iterations.
#[derive(Clone, Debug)]
pub struct AladinIterate {
    pub zeta: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    pub hessians: Vec<HessianApprox>,
    pub local_time: Vec<f64>,
}

impl AladinIterate {
    pub fn initial(problem: &DistProblem, cfg: &AladinConfig) -> Result<Self> {
        let zeta = cfg.zeta0.clone().unwrap_or_else(|| problem.initial_states());
        if zeta.len() != problem.n_regions() {
            return Err(Error::DimensionMismatch {
                expected: problem.n_regions(),
                found: zeta.len(),
            });
        }
        for (model, z) in problem.regions.iter().zip(&zeta) {
            model.check_state(z)?;
        }
        Ok(AladinIterate {
            zeta,
            lambda: cfg
                .lambda0
                .clone()
                .unwrap_or_else(|| DVector::from_element(problem.n_rows(), cfg.lambda_fill)),
            hessians: vec![HessianApprox::new(cfg.hessian); problem.n_regions()],
            local_time: vec![0.0; problem.n_regions()],
        })
    }
}

/// Everything one ALADIN iteration produced.
#[derive(Clone, Debug)]
pub struct AladinStep {
    pub chi: Vec<DVector<f64>>,
    pub pack: SensitivityPack,
    pub qp: CoordinationStep,
}

/// Local solves, sensitivities, coordination QP and update; `it` is
/// advanced in place.
pub fn aladin_step(problem: &DistProblem, cfg: &AladinConfig, it: &mut AladinIterate) -> Result<AladinStep> {
    let lambda = &it.lambda;
    let results: Vec<Result<(DVector<f64>, Sensitivity, f64)>> = problem
        .regions
        .par_iter()
        .zip(problem.consensus.par_iter())
        .zip(it.hessians.par_iter_mut())
        .enumerate()
        .map(|(i, ((model, block), hessian))| {
            let weight = match &cfg.sigma {
                Some(s) => &s[i] * cfg.nu,
                None => DVector::from_element(model.n_state(), cfg.nu),
            };
            let aug = Augmentation {
                linear: block.apply_transpose(lambda),
                weight,
                center: it.zeta[i].clone(),
            };
            let obj = LocalObjective::new(model, problem.formulation, aug)?;
            let wrap = |e: Error| Error::LocalSolve {
                region: model.region,
                source: Box::new(e),
            };
            let clock = Instant::now();
            let sol = solve_local(&obj, &it.zeta[i], &cfg.local).map_err(wrap)?;
            let elapsed = clock.elapsed().as_secs_f64();
            let sens = region_sensitivity(model, problem.formulation, hessian, &sol.chi, &sol.gamma).map_err(wrap)?;
            Ok((sol.chi, sens, elapsed))
        })
        .collect();
    let mut chi = Vec::with_capacity(results.len());
    let mut regions = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let (x, s, t) = r?;
        it.local_time[i] += t;
        chi.push(x);
        regions.push(s);
    }
    let pack = SensitivityPack { regions };
    let qp = aladin_coordination_qp(&pack, &chi, &it.lambda, cfg.rho, &problem.consensus, cfg.b.as_ref())?;
    let (zeta, lambda) = aladin_update(
        &chi,
        &qp.delta,
        &it.lambda,
        cfg.rho,
        &problem.consensus,
        cfg.b.as_ref(),
        cfg.dual_update,
    );
    it.zeta = zeta;
    it.lambda = lambda;
    Ok(AladinStep { chi, pack, qp })
}

/// Run until the power-flow, bus-specification and consensus norms of the
/// coordinated iterate `zeta` are all at most `cfg.tol`.
pub fn aladin_solve(problem: &DistProblem, cfg: &AladinConfig) -> Result<RunOutcome> {
    cfg.validate(problem)?;
    let mut it = AladinIterate::initial(problem, cfg)?;
    let mut trace = IterationTrace::new();
    trace.param("method", "aladin");
    trace.param("formulation", problem.formulation);
    trace.param("hessian", cfg.hessian);
    trace.param("rho", cfg.rho);
    trace.param("nu", cfg.nu);
    trace.param("sigma", if cfg.sigma.is_some() { "custom" } else { "identity" });
    trace.param("tol", cfg.tol);
    trace.param("max_iter", cfg.max_iter);
    trace.param("lambda0", cfg.lambda0.as_ref().map_or(cfg.lambda_fill.to_string(), |_| "custom".into()));
    trace.param("dual_update", cfg.dual_update);

    for iter in 1..=cfg.max_iter {
        let lambda_prev = it.lambda.clone();
        let step = match aladin_step(problem, cfg, &mut it) {
            Ok(s) => s,
            Err(e) => return Ok(outcome(it.zeta, trace, Termination::Failed(e))),
        };
        let residual = problem.consensus_residual(&it.zeta);
        let per_region = region_consensus(problem, &residual);
        let dual = (&it.lambda - &lambda_prev).amax();
        let mut global = TraceRow {
            iter,
            region: GLOBAL_ROW,
            pf_inf: 0.0,
            spec_inf: 0.0,
            consensus_inf: residual.amax(),
            step_inf: 0.0,
            dual_inf: dual,
            local_time_s: it.local_time.iter().sum(),
        };
        for (i, model) in problem.regions.iter().enumerate() {
            let row = TraceRow {
                iter,
                region: model.region as i64,
                pf_inf: model.pf_residual(&it.zeta[i])?.amax(),
                spec_inf: model.bus_spec_residual(&it.zeta[i])?.amax(),
                consensus_inf: per_region[i],
                step_inf: step.qp.delta[i].amax(),
                dual_inf: dual,
                local_time_s: it.local_time[i],
            };
            global.pf_inf = global.pf_inf.max(row.pf_inf);
            global.spec_inf = global.spec_inf.max(row.spec_inf);
            global.step_inf = global.step_inf.max(row.step_inf);
            trace.push(row);
        }
        trace.push(global);
        let finite = [global.pf_inf, global.spec_inf, global.consensus_inf].iter().all(|v| v.is_finite());
        if !finite {
            return Ok(outcome(it.zeta, trace, Termination::Failed(Error::Divergence(global.consensus_inf))));
        }
        if global.pf_inf <= cfg.tol && global.spec_inf <= cfg.tol && global.consensus_inf <= cfg.tol {
            return Ok(outcome(it.zeta, trace, Termination::Converged));
        }
    }
    Ok(outcome(it.zeta, trace, Termination::IterationLimit))
}

fn outcome(states: Vec<DVector<f64>>, trace: IterationTrace, termination: Termination) -> RunOutcome {
    RunOutcome {
        states,
        trace,
        termination,
    }
}
