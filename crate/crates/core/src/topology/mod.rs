//! Composition of regional cases: merging into one case, splitting into
//! region models with copy buses, and the consensus coupling between them.

pub mod consensus;
pub mod merge;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::casefile::{CaseData, ConnectionSpec};
use crate::error::{Error, Result};
use crate::network::{CopyBus, LocalBranch, RegionModel};

pub use consensus::{build_consensus, consensus_residual, ConsensusBlock};
pub use merge::{apply_surgery, merge_cases, MergeMap, Merged};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Zero cost, power-flow and specification equations as hard local
    /// constraints.
    Feasibility,
    /// Squared residual norm as local cost, no local constraints.
    LeastSquares,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::Feasibility => "feasibility",
            Formulation::LeastSquares => "least-squares",
        })
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feasibility" | "feas" => Ok(Formulation::Feasibility),
            "least-squares" | "ls" => Ok(Formulation::LeastSquares),
            other => Err(Error::Config(format!("unknown formulation '{other}'"))),
        }
    }
}

/// Region models with core and copy buses.
pub fn split_cases(cases: &[CaseData], spec: &ConnectionSpec) -> Result<Vec<RegionModel>> {
    let surgered = apply_surgery(cases, spec)?;
    build_regions(&surgered, spec)
}

fn build_regions(surgered: &[CaseData], spec: &ConnectionSpec) -> Result<Vec<RegionModel>> {
    let mut offsets = Vec::with_capacity(surgered.len());
    let mut offset = 0;
    for case in surgered {
        offsets.push(offset);
        offset += case.buses.len();
    }
    let indices: Vec<_> = surgered.iter().map(CaseData::bus_index).collect();
    let mut regions = Vec::with_capacity(surgered.len());
    for (r, case) in surgered.iter().enumerate() {
        let region = r + 1;
        let n_core = case.buses.len();
        let copies: Vec<CopyBus> = merge::copy_endpoints(spec, surgered, region)
            .into_iter()
            .map(|(owner_region, owner_bus)| {
                let pos = indices[owner_region - 1][&owner_bus];
                let bus = &surgered[owner_region - 1].buses[pos];
                CopyBus {
                    owner_region,
                    owner_bus,
                    owner_position: pos,
                    global_id: offsets[owner_region - 1] + pos + 1,
                    theta0: bus.va.to_radians(),
                    v0: bus.vm,
                }
            })
            .collect();
        let copy_position = |owner_region: usize, owner_bus: usize| {
            n_core
                + copies
                    .iter()
                    .position(|c| c.owner_region == owner_region && c.owner_bus == owner_bus)
                    .expect("every remote endpoint has a copy")
        };
        let ties = spec
            .ties_of(region)
            .map(|t| {
                if t.from_region == region {
                    LocalBranch {
                        from: indices[r][&t.from_bus],
                        to: copy_position(t.to_region, t.to_bus),
                        params: t.params,
                    }
                } else {
                    LocalBranch {
                        from: copy_position(t.from_region, t.from_bus),
                        to: indices[r][&t.to_bus],
                        params: t.params,
                    }
                }
            })
            .collect();
        let global_ids = (1..=n_core).map(|k| offsets[r] + k).collect();
        regions.push(RegionModel::new(region, case.clone(), global_ids, copies, ties)?);
    }
    Ok(regions)
}

/// Infinity norms of the three residual families.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Norms {
    pub pf: f64,
    pub spec: f64,
    pub consensus: f64,
}

impl Norms {
    pub fn max(&self) -> f64 {
        self.pf.max(self.spec).max(self.consensus)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.pf <= tol && self.spec <= tol && self.consensus <= tol
    }
}

/// A distributed power-flow problem.
#[derive(Clone, Debug)]
pub struct DistProblem {
    pub formulation: Formulation,
    pub regions: Vec<RegionModel>,
    pub consensus: Vec<ConsensusBlock>,
    pub merged: Merged,
    pub spec: ConnectionSpec,
}

impl DistProblem {
    pub fn build(cases: &[CaseData], spec: &ConnectionSpec, formulation: Formulation) -> Result<Self> {
        let surgered = apply_surgery(cases, spec)?;
        let merged = merge::assemble(&surgered, spec)?;
        let regions = build_regions(&surgered, spec)?;
        let consensus = build_consensus(&regions)?;
        Ok(DistProblem {
            formulation,
            regions,
            consensus,
            merged,
            spec: spec.clone(),
        })
    }

    pub fn with_formulation(mut self, formulation: Formulation) -> Self {
        self.formulation = formulation;
        self
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_rows(&self) -> usize {
        self.consensus.first().map(|b| b.n_rows).unwrap_or(0)
    }

    pub fn n_state(&self) -> usize {
        self.regions.iter().map(RegionModel::n_state).sum()
    }

    pub fn initial_states(&self) -> Vec<DVector<f64>> {
        self.regions.iter().map(RegionModel::initial_state).collect()
    }

    pub fn consensus_residual(&self, chis: &[DVector<f64>]) -> DVector<f64> {
        consensus_residual(&self.consensus, chis)
    }

    pub fn norms(&self, chis: &[DVector<f64>]) -> Result<Norms> {
        let mut n = Norms {
            consensus: self.consensus_residual(chis).amax(),
            ..Norms::default()
        };
        for (model, chi) in self.regions.iter().zip(chis) {
            n.pf = n.pf.max(model.pf_residual(chi)?.amax());
            n.spec = n.spec.max(model.bus_spec_residual(chi)?.amax());
        }
        Ok(n)
    }

    /// Region states from merged-case voltages (radians, p.u., merged bus
    /// order). Injections are recomputed from the voltages and copies take
    /// their owner's values.
    pub fn scatter(&self, va: &[f64], vm: &[f64]) -> Result<Vec<DVector<f64>>> {
        let n = self.merged.case.buses.len();
        if va.len() != n || vm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: va.len().min(vm.len()),
            });
        }
        Ok(self
            .regions
            .iter()
            .map(|model| {
                let mut chi = DVector::zeros(model.n_state());
                let buses = model
                    .global_ids
                    .iter()
                    .copied()
                    .chain(model.copies.iter().map(|c| c.global_id));
                for (b, g) in buses.enumerate() {
                    chi[model.theta_index(b)] = va[g - 1];
                    chi[model.v_index(b)] = vm[g - 1];
                }
                model.fill_injections(&mut chi);
                chi
            })
            .collect())
    }

    /// Merged-order `(va, vm)` read from the core buses of each region.
    pub fn gather(&self, chis: &[DVector<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.merged.case.buses.len();
        let (mut va, mut vm) = (vec![0.0; n], vec![0.0; n]);
        for (model, chi) in self.regions.iter().zip(chis) {
            for (b, g) in model.global_ids.iter().enumerate() {
                va[g - 1] = chi[model.theta_index(b)];
                vm[g - 1] = chi[model.v_index(b)];
            }
        }
        (va, vm)
    }

    /// Merged-order net injections `(p, q)` read from the core buses.
    pub fn gather_injections(&self, chis: &[DVector<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.merged.case.buses.len();
        let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
        for (model, chi) in self.regions.iter().zip(chis) {
            for (b, g) in model.global_ids.iter().enumerate() {
                p[g - 1] = chi[model.p_index(b)];
                q[g - 1] = chi[model.q_index(b)];
            }
        }
        (p, q)
    }

    /// Rebuild the merged case from the region models, dropping copies.
    pub fn remerge(&self) -> Result<CaseData> {
        let cases: Vec<CaseData> = self.regions.iter().map(|r| r.case.clone()).collect();
        Ok(merge::assemble(&cases, &self.spec)?.case)
    }
}
