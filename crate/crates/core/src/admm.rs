//! Consensus ADMM over a [`DistProblem`].
//!
//! Each iteration runs the local solves in parallel, averages the coupled
//! coordinates and updates the per-region multipliers.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::localnlp::{solve_local, Augmentation, LocalObjective, LocalOptions};
use crate::topology::{ConsensusBlock, DistProblem};
use crate::trace::{IterationTrace, RunOutcome, Termination, TraceRow, GLOBAL_ROW};

#[derive(Clone, Debug)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iter: usize,
    /// Outer tolerance on the power-flow, bus-specification and consensus
    /// infinity norms.
    pub tol: f64,
    /// Consensus violation that aborts the run.
    pub divergence: f64,
    pub local: LocalOptions,
    /// Initial coordination iterates; defaults to the case-file start.
    pub zeta0: Option<Vec<DVector<f64>>>,
    /// Initial multipliers; defaults to `lambda_fill` everywhere.
    pub lambda0: Option<Vec<DVector<f64>>>,
    pub lambda_fill: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1e3,
            max_iter: 500,
            tol: 1e-10,
            divergence: 1e6,
            local: LocalOptions::default(),
            zeta0: None,
            lambda0: None,
            lambda_fill: 0.01,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Variables carried between ADMM iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmIterate {
    /// Latest local solutions.
    pub chi: Vec<DVector<f64>>,
    pub zeta: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    /// Cumulative local-solve seconds per region.
    pub local_time: Vec<f64>,
}

impl AdmmIterate {
    pub fn initial(problem: &DistProblem, cfg: &AdmmConfig) -> Result<Self> {
        let zeta = cfg.zeta0.clone().unwrap_or_else(|| problem.initial_states());
        let lambda = cfg
            .lambda0
            .clone()
            .unwrap_or_else(|| vec![DVector::from_element(problem.n_rows(), cfg.lambda_fill); problem.n_regions()]);
        check_shapes(problem, &zeta, &lambda)?;
        Ok(AdmmIterate {
            chi: zeta.clone(),
            local_time: vec![0.0; zeta.len()],
            zeta,
            lambda,
        })
    }
}

fn check_shapes(problem: &DistProblem, states: &[DVector<f64>], lambda: &[DVector<f64>]) -> Result<()> {
    let n = problem.n_regions();
    for count in [states.len(), lambda.len()] {
        if count != n {
            return Err(Error::DimensionMismatch { expected: n, found: count });
        }
    }
    for (model, chi) in problem.regions.iter().zip(states) {
        model.check_state(chi)?;
    }
    for l in lambda {
        if l.len() != problem.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: problem.n_rows(),
                found: l.len(),
            });
        }
    }
    Ok(())
}

/// Sets of `(region index, column)` forced equal by the consensus rows.
pub fn consensus_groups(blocks: &[ConsensusBlock]) -> Vec<Vec<(usize, usize)>> {
    let mut nodes: Vec<(usize, usize)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(i, b)| b.touched_columns().into_iter().map(move |c| (i, c)))
        .collect();
    nodes.sort_unstable();
    let index = |key: (usize, usize)| nodes.binary_search(&key).expect("touched column");
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let n_rows = blocks.first().map(|b| b.n_rows).unwrap_or(0);
    let mut first_in_row: Vec<Option<usize>> = vec![None; n_rows];
    for (i, b) in blocks.iter().enumerate() {
        for &(r, c, _) in &b.entries {
            let node = index((i, c));
            match first_in_row[r] {
                None => first_in_row[r] = Some(node),
                Some(other) => {
                    let (a, b) = (root(&mut parent, node), root(&mut parent, other));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut slot = vec![usize::MAX; nodes.len()];
    for (k, &node) in nodes.iter().enumerate() {
        let r = root(&mut parent, k);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(node);
    }
    groups
}

/// Minimizer of `sum_i -lambda_i^T A_i zeta_i + rho/2 |A_i (chi_i - zeta_i)|^2`
/// subject to `sum_i A_i zeta_i = 0`.
///
/// Coordinates outside every consensus row are copied from `chi`.
pub fn admm_coordination(
    chi: &[DVector<f64>],
    lambda: &[DVector<f64>],
    rho: f64,
    blocks: &[ConsensusBlock],
) -> Result<Vec<DVector<f64>>> {
    if chi.len() != blocks.len() || lambda.len() != blocks.len() {
        return Err(Error::DimensionMismatch {
            expected: blocks.len(),
            found: chi.len().min(lambda.len()),
        });
    }
    for ((b, x), l) in blocks.iter().zip(chi).zip(lambda) {
        if x.len() != b.n_cols || l.len() != b.n_rows {
            return Err(Error::DimensionMismatch {
                expected: b.n_cols,
                found: x.len(),
            });
        }
    }
    let weights: Vec<DVector<f64>> = blocks.iter().map(ConsensusBlock::column_weights).collect();
    let pulls: Vec<DVector<f64>> = blocks.iter().zip(lambda).map(|(b, l)| b.apply_transpose(l)).collect();
    let mut zeta = chi.to_vec();
    for group in consensus_groups(blocks) {
        let (mut num, mut den) = (0.0, 0.0);
        for &(i, c) in &group {
            num += rho * weights[i][c] * chi[i][c] + pulls[i][c];
            den += rho * weights[i][c];
        }
        let value = num / den;
        for &(i, c) in &group {
            zeta[i][c] = value;
        }
    }
    Ok(zeta)
}

/// Result of one ADMM iteration.
#[derive(Clone, Debug)]
pub struct AdmmStep {
    pub next: AdmmIterate,
    /// `max |chi_i^{k+1} - chi_i^k|` per region.
    pub step: Vec<f64>,
}

/// One pass of local solves, coordination and dual update.
pub fn admm_step(problem: &DistProblem, cfg: &AdmmConfig, it: &AdmmIterate) -> Result<AdmmStep> {
    let rho = cfg.rho;
    let solved: Vec<Result<(DVector<f64>, f64)>> = problem
        .regions
        .par_iter()
        .zip(problem.consensus.par_iter())
        .enumerate()
        .map(|(i, (model, block))| {
            let aug = Augmentation {
                linear: block.apply_transpose(&it.lambda[i]),
                weight: block.column_weights() * rho,
                center: it.zeta[i].clone(),
            };
            let obj = LocalObjective::new(model, problem.formulation, aug)?;
            let clock = Instant::now();
            let sol = solve_local(&obj, &it.chi[i], &cfg.local).map_err(|e| Error::LocalSolve {
                region: model.region,
                source: Box::new(e),
            })?;
            Ok((sol.chi, clock.elapsed().as_secs_f64()))
        })
        .collect();
    let mut chi = Vec::with_capacity(solved.len());
    let mut local_time = it.local_time.clone();
    for (i, r) in solved.into_iter().enumerate() {
        let (x, t) = r?;
        local_time[i] += t;
        chi.push(x);
    }
    let zeta = admm_coordination(&chi, &it.lambda, rho, &problem.consensus)?;
    let lambda: Vec<DVector<f64>> = problem
        .consensus
        .par_iter()
        .enumerate()
        .map(|(i, block)| &it.lambda[i] + block.apply(&(&chi[i] - &zeta[i])) * rho)
        .collect();
    let step = chi.iter().zip(&it.chi).map(|(a, b)| (a - b).amax()).collect();
    Ok(AdmmStep {
        next: AdmmIterate {
            chi,
            zeta,
            lambda,
            local_time,
        },
        step,
    })
}

/// Infinity norm of the consensus rows touched by each region.
pub(crate) fn region_consensus(problem: &DistProblem, residual: &DVector<f64>) -> Vec<f64> {
    problem
        .consensus
        .iter()
        .map(|b| b.entries.iter().map(|&(r, _, _)| residual[r].abs()).fold(0.0, f64::max))
        .collect()
}

pub fn admm_solve(problem: &DistProblem, cfg: &AdmmConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut it = AdmmIterate::initial(problem, cfg)?;
    let mut trace = IterationTrace::new();
    trace.param("method", "admm");
    trace.param("formulation", problem.formulation);
    trace.param("rho", cfg.rho);
    trace.param("tol", cfg.tol);
    trace.param("max_iter", cfg.max_iter);
    trace.param("lambda0", cfg.lambda0.as_ref().map_or(cfg.lambda_fill.to_string(), |_| "custom".into()));

    for iter in 1..=cfg.max_iter {
        let step = match admm_step(problem, cfg, &it) {
            Ok(s) => s,
            Err(e) => return Ok(outcome(it.chi, trace, Termination::Failed(e))),
        };
        let next = step.next;
        let residual = problem.consensus_residual(&next.chi);
        let per_region = region_consensus(problem, &residual);
        let mut global = TraceRow {
            iter,
            region: GLOBAL_ROW,
            pf_inf: 0.0,
            spec_inf: 0.0,
            consensus_inf: residual.amax(),
            step_inf: 0.0,
            dual_inf: 0.0,
            local_time_s: next.local_time.iter().sum(),
        };
        for (i, model) in problem.regions.iter().enumerate() {
            let row = TraceRow {
                iter,
                region: model.region as i64,
                pf_inf: model.pf_residual(&next.chi[i])?.amax(),
                spec_inf: model.bus_spec_residual(&next.chi[i])?.amax(),
                consensus_inf: per_region[i],
                step_inf: step.step[i],
                dual_inf: (&next.lambda[i] - &it.lambda[i]).amax(),
                local_time_s: next.local_time[i],
            };
            global.pf_inf = global.pf_inf.max(row.pf_inf);
            global.spec_inf = global.spec_inf.max(row.spec_inf);
            global.step_inf = global.step_inf.max(row.step_inf);
            global.dual_inf = global.dual_inf.max(row.dual_inf);
            trace.push(row);
        }
        trace.push(global);
        it = next;
        if !global.consensus_inf.is_finite() || global.consensus_inf > cfg.divergence {
            return Ok(outcome(it.chi, trace, Termination::Failed(Error::Divergence(global.consensus_inf))));
        }
        if global.pf_inf <= cfg.tol && global.spec_inf <= cfg.tol && global.consensus_inf <= cfg.tol {
            return Ok(outcome(it.chi, trace, Termination::Converged));
        }
    }
    Ok(outcome(it.chi, trace, Termination::IterationLimit))
}

fn outcome(states: Vec<DVector<f64>>, trace: IterationTrace, termination: Termination) -> RunOutcome {
    RunOutcome {
        states,
        trace,
        termination,
    }
}
