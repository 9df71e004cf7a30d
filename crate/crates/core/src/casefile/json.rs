//! JSON mirror of the MATPOWER case format.
//!
//! ```json
//! { "baseMVA": 100, "bus": [[...13 columns]], "gen": [[...21]], "branch": [[...13]] }
//! ```

use serde::{Deserialize, Serialize};

use super::CaseData;
use crate::error::Result;

#[derive(Serialize, Deserialize)]
struct CaseJson {
    #[serde(rename = "baseMVA")]
    base_mva: f64,
    bus: Vec<Vec<f64>>,
    gen: Vec<Vec<f64>>,
    branch: Vec<Vec<f64>>,
}

pub fn parse_case_json(text: &str) -> Result<CaseData> {
    let raw: CaseJson = serde_json::from_str(text)?;
    CaseData::from_matrices(raw.base_mva, &raw.bus, &raw.gen, &raw.branch)
}

pub fn write_case_json(case: &CaseData) -> String {
    let raw = CaseJson {
        base_mva: case.base_mva,
        bus: case.bus_matrix(),
        gen: case.gen_matrix(),
        branch: case.branch_matrix(),
    };
    serde_json::to_string_pretty(&raw).expect("case matrices are always serializable")
}
