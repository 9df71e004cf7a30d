use serde::{Deserialize, Serialize};

use crate::casefile::{BusType, CaseData, ConnectionSpec};
use crate::error::{Error, Result};

/// Bookkeeping emitted next to a merged case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeMap {
    pub master: usize,
    pub regions: Vec<RegionEntry>,
    pub ties: Vec<TieEntry>,
    pub copies: Vec<CopyEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub region: usize,
    /// Merged id of the region's `k`-th bus is `offset + k + 1`.
    pub offset: usize,
    pub original_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieEntry {
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub from_global: usize,
    pub to_global: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyEntry {
    pub region: usize,
    pub owner_region: usize,
    pub owner_bus: usize,
    pub global_id: usize,
}

impl MergeMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("merge map is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Merged id of bus `bus` of `region` (1-based).
    pub fn global_id(&self, region: usize, bus: usize) -> Option<usize> {
        let entry = self.regions.get(region.checked_sub(1)?)?;
        let k = entry.original_ids.iter().position(|&b| b == bus)?;
        Some(entry.offset + k + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Merged {
    pub case: CaseData,
    pub map: MergeMap,
}

pub(crate) fn check_inputs(cases: &[CaseData], spec: &ConnectionSpec) -> Result<()> {
    if cases.len() != spec.n_regions {
        return Err(Error::InvalidConnection(format!(
            "{} cases given for a specification over {} regions",
            cases.len(),
            spec.n_regions
        )));
    }
    spec.validate()?;
    if let Some(c) = cases.iter().find(|c| c.base_mva != cases[0].base_mva) {
        return Err(Error::InvalidCase(format!(
            "regions use different MVA bases ({} and {})",
            cases[0].base_mva, c.base_mva
        )));
    }
    for t in &spec.ties {
        for (region, bus) in [(t.from_region, t.from_bus), (t.to_region, t.to_bus)] {
            let record = cases[region - 1].find_bus(bus).ok_or_else(|| {
                Error::InvalidConnection(format!("region {region} has no bus {bus}"))
            })?;
            if !record.bus_type.is_generation() {
                return Err(Error::NotGenerationBus {
                    region,
                    bus,
                    found: record.bus_type.name(),
                });
            }
        }
    }
    Ok(())
}

/// Bus-type surgery on the regional cases.
///
/// The master region is left untouched. In every other region a tie's
/// receiving bus becomes PQ with its generators switched off (a former slack
/// also loses its demand), and a slack that survives this becomes PV with
/// the set-points of its generators.
pub fn apply_surgery(cases: &[CaseData], spec: &ConnectionSpec) -> Result<Vec<CaseData>> {
    check_inputs(cases, spec)?;
    let mut out = cases.to_vec();
    for t in &spec.ties {
        if t.to_region == spec.master {
            continue;
        }
        let case = &mut out[t.to_region - 1];
        let bus = case
            .buses
            .iter_mut()
            .find(|b| b.bus_id == t.to_bus)
            .expect("endpoints checked above");
        match bus.bus_type {
            BusType::Slack => {
                bus.bus_type = BusType::Pq;
                bus.pd = 0.0;
                bus.qd = 0.0;
            }
            BusType::Pv => bus.bus_type = BusType::Pq,
            BusType::Pq => continue,
        }
        for g in case.gens.iter_mut().filter(|g| g.bus_id == t.to_bus) {
            g.in_service = false;
        }
    }
    for (r, case) in out.iter_mut().enumerate() {
        if r + 1 == spec.master {
            continue;
        }
        for bus in case.buses.iter_mut().filter(|b| b.bus_type == BusType::Slack) {
            bus.bus_type = BusType::Pv;
        }
    }
    Ok(out)
}

/// Concatenate already-surgered regional cases and append the tie branches.
pub(crate) fn assemble(surgered: &[CaseData], spec: &ConnectionSpec) -> Result<Merged> {
    let mut offset = 0;
    let mut regions = Vec::with_capacity(surgered.len());
    for (r, case) in surgered.iter().enumerate() {
        regions.push(RegionEntry {
            region: r + 1,
            offset,
            original_ids: case.buses.iter().map(|b| b.bus_id).collect(),
        });
        offset += case.buses.len();
    }
    let mut map = MergeMap {
        master: spec.master,
        regions,
        ties: Vec::new(),
        copies: Vec::new(),
    };
    let mut merged = CaseData {
        base_mva: surgered.first().map(|c| c.base_mva).unwrap_or(100.0),
        buses: Vec::with_capacity(offset),
        gens: Vec::new(),
        branches: Vec::new(),
    };
    for (r, case) in surgered.iter().enumerate() {
        let index = case.bus_index();
        let entry = &map.regions[r];
        let renumber = |id: usize| entry.offset + index[&id] + 1;
        for b in &case.buses {
            let mut b = b.clone();
            b.bus_id = renumber(b.bus_id);
            merged.buses.push(b);
        }
        for g in &case.gens {
            let mut g = g.clone();
            g.bus_id = renumber(g.bus_id);
            merged.gens.push(g);
        }
        for br in &case.branches {
            let mut br = br.clone();
            br.from_bus = renumber(br.from_bus);
            br.to_bus = renumber(br.to_bus);
            merged.branches.push(br);
        }
    }
    for t in &spec.ties {
        let missing = |r: usize, b: usize| Error::InvalidConnection(format!("region {r} has no bus {b}"));
        let f = map
            .global_id(t.from_region, t.from_bus)
            .ok_or_else(|| missing(t.from_region, t.from_bus))?;
        let to = map
            .global_id(t.to_region, t.to_bus)
            .ok_or_else(|| missing(t.to_region, t.to_bus))?;
        merged.branches.push(t.to_branch(f, to));
        map.ties.push(TieEntry {
            from: (t.from_region, t.from_bus),
            to: (t.to_region, t.to_bus),
            from_global: f,
            to_global: to,
        });
    }
    for region in 1..=spec.n_regions {
        for (owner_region, owner_bus) in copy_endpoints(spec, surgered, region) {
            map.copies.push(CopyEntry {
                region,
                owner_region,
                owner_bus,
                global_id: map.global_id(owner_region, owner_bus).expect("tie endpoints exist"),
            });
        }
    }
    merged.validate()?;
    Ok(Merged { case: merged, map })
}

/// Neighbor buses copied into `region`: one per distinct remote tie
/// endpoint, ordered by (owning region, position in the owner's table).
pub(crate) fn copy_endpoints(spec: &ConnectionSpec, cases: &[CaseData], region: usize) -> Vec<(usize, usize)> {
    let mut keyed: Vec<(usize, usize, usize)> = spec
        .ties_of(region)
        .map(|t| {
            if t.from_region == region {
                (t.to_region, t.to_bus)
            } else {
                (t.from_region, t.from_bus)
            }
        })
        .map(|(r, b)| {
            let pos = cases[r - 1].bus_index()[&b];
            (r, pos, b)
        })
        .collect();
    keyed.sort_unstable();
    keyed.dedup();
    keyed.into_iter().map(|(r, _, b)| (r, b)).collect()
}

/// Merge regional cases into one case with a single slack bus.
pub fn merge_cases(cases: &[CaseData], spec: &ConnectionSpec) -> Result<Merged> {
    let surgered = apply_surgery(cases, spec)?;
    assemble(&surgered, spec)
}
