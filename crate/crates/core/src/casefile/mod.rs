//! MATPOWER-style case data: bus, generator and branch tables.
//!
//! Two on-disk encodings are supported, both mapping onto [`CaseData`]:
//! the MATPOWER `.m` function file (a restricted grammar, see [`matpower`])
//! and a JSON mirror holding the same numeric matrices (see [`json`]).
//! Connection specifications for multi-region problems live in
//! [`connection`].
//!
//! Units follow MATPOWER: powers in MW/MVAr, voltages in p.u., angles in
//! degrees. Conversion to per-unit radians happens when network models are
//! built.

pub mod connection;
pub mod json;
pub mod matpower;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use connection::{ConnectionSpec, Tie, TieParams};

pub const BUS_COLUMNS: usize = 13;
pub const GEN_COLUMNS: usize = 21;
pub const BRANCH_COLUMNS: usize = 13;

/// Trailing generator columns (Pc1 .. apf) that are carried but not interpreted.
pub const GEN_EXTRA_COLUMNS: usize = GEN_COLUMNS - 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusType {
    Pq,
    Pv,
    Slack,
}

impl BusType {
    pub fn from_code(code: f64) -> Option<Self> {
        match code {
            1.0 => Some(BusType::Pq),
            2.0 => Some(BusType::Pv),
            3.0 => Some(BusType::Slack),
            _ => None,
        }
    }

    pub fn code(self) -> f64 {
        match self {
            BusType::Pq => 1.0,
            BusType::Pv => 2.0,
            BusType::Slack => 3.0,
        }
    }

    pub fn is_generation(self) -> bool {
        matches!(self, BusType::Pv | BusType::Slack)
    }

    pub fn name(self) -> &'static str {
        match self {
            BusType::Pq => "PQ",
            BusType::Pv => "PV",
            BusType::Slack => "slack",
        }
    }
}

impl fmt::Display for BusType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusRecord {
    pub bus_id: usize,
    pub bus_type: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub area: f64,
    pub vm: f64,
    /// Degrees.
    pub va: f64,
    pub base_kv: f64,
    pub zone: f64,
    pub vmax: f64,
    pub vmin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenRecord {
    pub bus_id: usize,
    pub pg: f64,
    pub qg: f64,
    pub qmax: f64,
    pub qmin: f64,
    pub vg: f64,
    pub mbase: f64,
    pub in_service: bool,
    pub pmax: f64,
    pub pmin: f64,
    pub extra: [f64; GEN_EXTRA_COLUMNS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchRecord {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_charge: f64,
    pub rate_a: f64,
    pub rate_b: f64,
    pub rate_c: f64,
    /// Off-nominal tap ratio; a file value of 0 is stored as 1.0.
    pub tap: f64,
    /// Degrees.
    pub shift: f64,
    pub in_service: bool,
    pub angmin: f64,
    pub angmax: f64,
}

impl BranchRecord {
    /// A plain in-service branch with default ratings and angle limits.
    pub fn new(from_bus: usize, to_bus: usize, r: f64, x: f64, b_charge: f64, tap: f64, shift: f64) -> Self {
        BranchRecord {
            from_bus,
            to_bus,
            r,
            x,
            b_charge,
            rate_a: 0.0,
            rate_b: 0.0,
            rate_c: 0.0,
            tap: normalize_tap(tap),
            shift,
            in_service: true,
            angmin: -360.0,
            angmax: 360.0,
        }
    }
}

pub(crate) fn normalize_tap(tap: f64) -> f64 {
    if tap == 0.0 {
        1.0
    } else {
        tap
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseData {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub gens: Vec<GenRecord>,
    pub branches: Vec<BranchRecord>,
}

impl CaseData {
    /// Build a case from MATPOWER numeric matrices and validate it.
    ///
    /// Rows may carry more columns than MATPOWER defines (solved cases append
    /// result columns); these are ignored. Generator rows need at least 10
    /// columns, branch rows at least 11.
    pub fn from_matrices(
        base_mva: f64,
        bus: &[Vec<f64>],
        gen: &[Vec<f64>],
        branch: &[Vec<f64>],
    ) -> Result<Self> {
        let buses = bus
            .iter()
            .enumerate()
            .map(|(i, row)| bus_from_row(i, row))
            .collect::<Result<Vec<_>>>()?;
        let gens = gen
            .iter()
            .enumerate()
            .map(|(i, row)| gen_from_row(i, row))
            .collect::<Result<Vec<_>>>()?;
        let branches = branch
            .iter()
            .enumerate()
            .map(|(i, row)| branch_from_row(i, row))
            .collect::<Result<Vec<_>>>()?;
        let case = CaseData {
            base_mva,
            buses,
            gens,
            branches,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn bus_matrix(&self) -> Vec<Vec<f64>> {
        self.buses
            .iter()
            .map(|b| {
                vec![
                    b.bus_id as f64,
                    b.bus_type.code(),
                    b.pd,
                    b.qd,
                    b.gs,
                    b.bs,
                    b.area,
                    b.vm,
                    b.va,
                    b.base_kv,
                    b.zone,
                    b.vmax,
                    b.vmin,
                ]
            })
            .collect()
    }

    pub fn gen_matrix(&self) -> Vec<Vec<f64>> {
        self.gens
            .iter()
            .map(|g| {
                let mut row = vec![
                    g.bus_id as f64,
                    g.pg,
                    g.qg,
                    g.qmax,
                    g.qmin,
                    g.vg,
                    g.mbase,
                    if g.in_service { 1.0 } else { 0.0 },
                    g.pmax,
                    g.pmin,
                ];
                row.extend_from_slice(&g.extra);
                row
            })
            .collect()
    }

    pub fn branch_matrix(&self) -> Vec<Vec<f64>> {
        self.branches
            .iter()
            .map(|br| {
                vec![
                    br.from_bus as f64,
                    br.to_bus as f64,
                    br.r,
                    br.x,
                    br.b_charge,
                    br.rate_a,
                    br.rate_b,
                    br.rate_c,
                    br.tap,
                    br.shift,
                    if br.in_service { 1.0 } else { 0.0 },
                    br.angmin,
                    br.angmax,
                ]
            })
            .collect()
    }

    /// Map from bus id to row position.
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.bus_id, i))
            .collect()
    }

    pub fn slack_position(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.bus_type == BusType::Slack)
    }

    pub fn find_bus(&self, bus_id: usize) -> Option<&BusRecord> {
        self.buses.iter().find(|b| b.bus_id == bus_id)
    }

    /// Active generators attached to `bus_id`.
    pub fn active_gens_at(&self, bus_id: usize) -> impl Iterator<Item = &GenRecord> {
        self.gens
            .iter()
            .filter(move |g| g.in_service && g.bus_id == bus_id)
    }

    /// Check every structural invariant of a case.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidCase(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        if self.buses.is_empty() {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        let mut seen = HashSet::new();
        for b in &self.buses {
            if b.bus_id == 0 {
                return Err(Error::InvalidCase("bus ids must be positive".into()));
            }
            if !seen.insert(b.bus_id) {
                return Err(Error::DuplicateBus(b.bus_id));
            }
            if !(b.vm > 0.0) {
                return Err(Error::InvalidCase(format!(
                    "bus {} has non-positive voltage magnitude {}",
                    b.bus_id, b.vm
                )));
            }
        }
        let n_slack = self
            .buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .count();
        if n_slack != 1 {
            return Err(Error::SlackCount(n_slack));
        }
        for (index, g) in self.gens.iter().enumerate() {
            if !seen.contains(&g.bus_id) {
                return Err(Error::DanglingGenerator {
                    index: index + 1,
                    bus: g.bus_id,
                });
            }
        }
        for b in self.buses.iter().filter(|b| b.bus_type.is_generation()) {
            if self.active_gens_at(b.bus_id).next().is_none() {
                return Err(Error::InvalidCase(format!(
                    "{} bus {} has no active generator",
                    b.bus_type, b.bus_id
                )));
            }
        }
        for (i, br) in self.branches.iter().enumerate() {
            if !seen.contains(&br.from_bus) || !seen.contains(&br.to_bus) {
                return Err(Error::InvalidCase(format!(
                    "branch {} references unknown bus ({} -> {})",
                    i + 1,
                    br.from_bus,
                    br.to_bus
                )));
            }
            if br.from_bus == br.to_bus {
                return Err(Error::InvalidCase(format!(
                    "branch {} connects bus {} to itself",
                    i + 1,
                    br.from_bus
                )));
            }
            if br.in_service && br.r == 0.0 && br.x == 0.0 {
                return Err(Error::SingularBranch { index: i + 1 });
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adjacency = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|br| br.in_service) {
            let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            Some(i) => Err(Error::InvalidCase(format!(
                "network is not connected: bus {} is isolated from bus {}",
                self.buses[i].bus_id, self.buses[0].bus_id
            ))),
            None => Ok(()),
        }
    }
}

fn require_columns(table: &str, row_index: usize, row: &[f64], min: usize) -> Result<()> {
    if row.len() < min {
        return Err(Error::InvalidCase(format!(
            "{table} row {} has {} columns, expected at least {min}",
            row_index + 1,
            row.len()
        )));
    }
    Ok(())
}

fn as_id(table: &str, row_index: usize, value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value < usize::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidCase(format!(
            "{table} row {}: bus id {value} is not a positive integer",
            row_index + 1
        )))
    }
}

fn bus_from_row(i: usize, row: &[f64]) -> Result<BusRecord> {
    require_columns("bus", i, row, BUS_COLUMNS)?;
    let bus_id = as_id("bus", i, row[0])?;
    let bus_type = BusType::from_code(row[1]).ok_or_else(|| {
        Error::InvalidCase(format!(
            "bus {bus_id} has unsupported type code {}",
            row[1]
        ))
    })?;
    Ok(BusRecord {
        bus_id,
        bus_type,
        pd: row[2],
        qd: row[3],
        gs: row[4],
        bs: row[5],
        area: row[6],
        vm: row[7],
        va: row[8],
        base_kv: row[9],
        zone: row[10],
        vmax: row[11],
        vmin: row[12],
    })
}

fn gen_from_row(i: usize, row: &[f64]) -> Result<GenRecord> {
    require_columns("gen", i, row, 10)?;
    let mut extra = [0.0; GEN_EXTRA_COLUMNS];
    for (slot, value) in extra.iter_mut().zip(row.iter().skip(10)) {
        *slot = *value;
    }
    Ok(GenRecord {
        bus_id: as_id("gen", i, row[0])?,
        pg: row[1],
        qg: row[2],
        qmax: row[3],
        qmin: row[4],
        vg: row[5],
        mbase: row[6],
        in_service: row[7] > 0.0,
        pmax: row[8],
        pmin: row[9],
        extra,
    })
}

fn branch_from_row(i: usize, row: &[f64]) -> Result<BranchRecord> {
    require_columns("branch", i, row, 11)?;
    Ok(BranchRecord {
        from_bus: as_id("branch", i, row[0])?,
        to_bus: as_id("branch", i, row[1])?,
        r: row[2],
        x: row[3],
        b_charge: row[4],
        rate_a: row[5],
        rate_b: row[6],
        rate_c: row[7],
        tap: normalize_tap(row[8]),
        shift: row[9],
        in_service: row[10] > 0.0,
        angmin: row.get(11).copied().unwrap_or(-360.0),
        angmax: row.get(12).copied().unwrap_or(360.0),
    })
}

/// Read a case file, choosing the parser by extension (`.json` or MATPOWER
/// otherwise).
pub fn read_case(path: &Path) -> Result<CaseData> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        json::parse_case_json(&text)
    } else {
        matpower::parse_matpower_case(&text)
    }
}

/// Read a connection specification together with the case files it lists,
/// resolved relative to the specification's directory.
pub fn load_composite(path: &Path) -> Result<(Vec<CaseData>, ConnectionSpec)> {
    let spec = ConnectionSpec::parse(&std::fs::read_to_string(path)?, None)?;
    if spec.case_files.len() != spec.n_regions {
        return Err(Error::InvalidConnection(format!(
            "{} lists {} case files for {} regions",
            path.display(),
            spec.case_files.len(),
            spec.n_regions
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let cases = spec
        .case_files
        .iter()
        .map(|f| read_case(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((cases, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_bundled_composite() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/composite53.json");
        let (cases, spec) = load_composite(&path).unwrap();
        assert_eq!(spec.n_regions, 3);
        let sizes: Vec<usize> = cases.iter().map(|c| c.buses.len()).collect();
        assert_eq!(sizes, vec![9, 14, 30]);
    }

    pub(crate) fn two_bus_rows() -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let bus = vec![
            vec![1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 345.0, 1.0, 1.1, 0.9],
            vec![2.0, 1.0, 50.0, 10.0, 0.0, 0.0, 1.0, 1.0, 0.0, 345.0, 1.0, 1.1, 0.9],
        ];
        let mut gen = vec![vec![1.0, 0.0, 0.0, 300.0, -300.0, 1.0, 100.0, 1.0, 250.0, 10.0]];
        gen[0].resize(GEN_COLUMNS, 0.0);
        let branch = vec![vec![
            1.0, 2.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -360.0, 360.0,
        ]];
        (bus, gen, branch)
    }

    #[test]
    fn tap_zero_becomes_one() {
        let (bus, gen, branch) = two_bus_rows();
        let case = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap();
        assert_eq!(case.branches[0].tap, 1.0);
    }

    #[test]
    fn rejects_two_slacks() {
        let (mut bus, mut gen, branch) = two_bus_rows();
        bus[1][1] = 3.0;
        let mut g2 = gen[0].clone();
        g2[0] = 2.0;
        gen.push(g2);
        let err = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap_err();
        assert!(matches!(err, Error::SlackCount(2)));
    }

    #[test]
    fn rejects_zero_slacks() {
        let (mut bus, gen, branch) = two_bus_rows();
        bus[0][1] = 1.0;
        let err = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap_err();
        assert!(matches!(err, Error::SlackCount(0)));
    }

    #[test]
    fn rejects_dangling_generator() {
        let (bus, mut gen, branch) = two_bus_rows();
        let mut g = gen[0].clone();
        g[0] = 7.0;
        gen.push(g);
        let err = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap_err();
        assert!(matches!(err, Error::DanglingGenerator { index: 2, bus: 7 }));
    }

    #[test]
    fn rejects_zero_impedance_branch() {
        let (bus, gen, mut branch) = two_bus_rows();
        branch[0][3] = 0.0;
        let err = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap_err();
        assert!(matches!(err, Error::SingularBranch { index: 1 }));
        // an out-of-service zero-impedance branch is fine structurally but
        // leaves the network disconnected
        branch[0][10] = 0.0;
        let err = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap_err();
        assert!(err.to_string().contains("not connected"));
    }

    #[test]
    fn rejects_generator_free_pv_bus() {
        let (mut bus, gen, branch) = two_bus_rows();
        bus[1][1] = 2.0;
        let err = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap_err();
        assert!(err.to_string().contains("no active generator"));
    }

    #[test]
    fn short_gen_rows_are_padded() {
        let (bus, mut gen, branch) = two_bus_rows();
        gen[0].truncate(10);
        let case = CaseData::from_matrices(100.0, &bus, &gen, &branch).unwrap();
        assert_eq!(case.gen_matrix()[0].len(), GEN_COLUMNS);
    }
}
