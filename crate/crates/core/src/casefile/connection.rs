//! Connection specifications: which buses of which regions are tied, and by
//! what kind of branch.
//!
//! ```json
//! {
//!   "cases": ["case9.m", "case14.m"],
//!   "master": 1,
//!   "connections": [
//!     {"from": [1, 2], "to": [2, 3], "r": 0.0, "x": 0.00623, "b": 0.0, "tap": 0.985, "shift": 0.0}
//!   ]
//! }
//! ```
//!
//! Regions are numbered from 1. `cases` is optional and lists case files
//! (relative to the JSON file) in region order. Omitted tie parameters take
//! the transformer defaults in [`TieParams::default`].

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{normalize_tap, BranchRecord};
use crate::error::{Error, Result};

pub const DEFAULT_TIE_X: f64 = 0.00623;
pub const DEFAULT_TIE_TAP: f64 = 0.985;

/// Electrical parameters of a tie line (MATPOWER branch semantics, p.u.).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TieParams {
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
    /// Degrees.
    pub shift: f64,
}

impl Default for TieParams {
    fn default() -> Self {
        TieParams {
            r: 0.0,
            x: DEFAULT_TIE_X,
            b: 0.0,
            tap: DEFAULT_TIE_TAP,
            shift: 0.0,
        }
    }
}

/// A directed tie between two regions. Region numbers are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct Tie {
    pub from_region: usize,
    pub from_bus: usize,
    pub to_region: usize,
    pub to_bus: usize,
    pub params: TieParams,
}

impl Tie {
    pub fn to_branch(&self, from_bus: usize, to_bus: usize) -> BranchRecord {
        let p = &self.params;
        BranchRecord::new(from_bus, to_bus, p.r, p.x, p.b, p.tap, p.shift)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionSpec {
    pub n_regions: usize,
    pub master: usize,
    pub ties: Vec<Tie>,
    /// Case files named by the specification, if any.
    pub case_files: Vec<String>,
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum MasterField {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Deserialize, Serialize)]
struct RawSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cases: Vec<String>,
    #[serde(default = "default_master")]
    master: MasterField,
    #[serde(default)]
    connections: Vec<RawTie>,
}

fn default_master() -> MasterField {
    MasterField::One(1)
}

#[derive(Deserialize, Serialize)]
struct RawTie {
    from: (usize, usize),
    to: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<f64>,
}

impl ConnectionSpec {
    /// A single region without ties.
    pub fn single_region() -> Self {
        ConnectionSpec {
            n_regions: 1,
            master: 1,
            ties: Vec::new(),
            case_files: Vec::new(),
        }
    }

    /// Parse and validate a JSON connection specification.
    ///
    /// When `n_regions` is `None` the region count is taken from the `cases`
    /// list, falling back to the largest region index mentioned.
    pub fn parse(text: &str, n_regions: Option<usize>) -> Result<Self> {
        let raw: RawSpec = serde_json::from_str(text)?;
        let master = match raw.master {
            MasterField::One(m) => m,
            MasterField::Many(ms) if ms.len() == 1 => ms[0],
            MasterField::Many(ms) => return Err(Error::MultipleMasters(ms)),
        };
        let n_regions = n_regions.unwrap_or_else(|| {
            if raw.cases.is_empty() {
                raw.connections
                    .iter()
                    .flat_map(|c| [c.from.0, c.to.0])
                    .chain([master])
                    .max()
                    .unwrap_or(1)
            } else {
                raw.cases.len()
            }
        });
        let defaults = TieParams::default();
        let ties = raw
            .connections
            .into_iter()
            .map(|c| Tie {
                from_region: c.from.0,
                from_bus: c.from.1,
                to_region: c.to.0,
                to_bus: c.to.1,
                params: TieParams {
                    r: c.r.unwrap_or(defaults.r),
                    x: c.x.unwrap_or(defaults.x),
                    b: c.b.unwrap_or(defaults.b),
                    tap: normalize_tap(c.tap.unwrap_or(defaults.tap)),
                    shift: c.shift.unwrap_or(defaults.shift),
                },
            })
            .collect();
        let spec = ConnectionSpec {
            n_regions,
            master,
            ties,
            case_files: raw.cases,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let raw = RawSpec {
            cases: self.case_files.clone(),
            master: MasterField::One(self.master),
            connections: self
                .ties
                .iter()
                .map(|t| RawTie {
                    from: (t.from_region, t.from_bus),
                    to: (t.to_region, t.to_bus),
                    r: Some(t.params.r),
                    x: Some(t.params.x),
                    b: Some(t.params.b),
                    tap: Some(t.params.tap),
                    shift: Some(t.params.shift),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("connection spec is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_regions;
        if n == 0 {
            return Err(Error::InvalidConnection("at least one region is required".into()));
        }
        let check = |index: usize| {
            if index == 0 || index > n {
                Err(Error::RegionOutOfRange {
                    index,
                    n_regions: n,
                })
            } else {
                Ok(())
            }
        };
        check(self.master)?;
        let mut seen = HashSet::new();
        for t in &self.ties {
            check(t.from_region)?;
            check(t.to_region)?;
            if t.from_region == t.to_region {
                return Err(Error::InvalidConnection(format!(
                    "tie {}:{} -> {}:{} stays inside one region",
                    t.from_region, t.from_bus, t.to_region, t.to_bus
                )));
            }
            if !seen.insert((t.from_region, t.from_bus, t.to_region, t.to_bus)) {
                return Err(Error::DuplicateConnection {
                    from: (t.from_region, t.from_bus),
                    to: (t.to_region, t.to_bus),
                });
            }
            if t.params.r == 0.0 && t.params.x == 0.0 {
                return Err(Error::InvalidConnection(format!(
                    "tie {}:{} -> {}:{} has zero impedance",
                    t.from_region, t.from_bus, t.to_region, t.to_bus
                )));
            }
        }
        if !self.case_files.is_empty() && self.case_files.len() != n {
            return Err(Error::InvalidConnection(format!(
                "{} case files listed for {n} regions",
                self.case_files.len()
            )));
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.n_regions;
        let mut adjacency = vec![Vec::new(); n + 1];
        for t in &self.ties {
            adjacency[t.from_region].push(t.to_region);
            adjacency[t.to_region].push(t.from_region);
        }
        let mut visited = vec![false; n + 1];
        visited[self.master] = true;
        let mut queue = VecDeque::from([self.master]);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        match (1..=n).find(|&r| !visited[r]) {
            Some(r) => Err(Error::DisconnectedRegions(r)),
            None => Ok(()),
        }
    }

    /// Ties touching `region` (1-based).
    pub fn ties_of(&self, region: usize) -> impl Iterator<Item = &Tie> {
        self.ties
            .iter()
            .filter(move |t| t.from_region == region || t.to_region == region)
    }
}
