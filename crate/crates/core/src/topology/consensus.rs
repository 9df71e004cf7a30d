use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::RegionModel;

/// Sparse selector `A_i` mapping a region state into the consensus space.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusBlock {
    pub region: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    /// `(row, column, sign)` triplets with sign in {-1, +1}; each row holds
    /// at most one entry per block.
    pub entries: Vec<(usize, usize, f64)>,
}

impl ConsensusBlock {
    pub fn apply(&self, chi: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_rows);
        for &(r, c, s) in &self.entries {
            y[r] += s * chi[c];
        }
        y
    }

    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_cols);
        for &(r, c, s) in &self.entries {
            x[c] += s * y[r];
        }
        x
    }

    /// Diagonal of `A_i^T A_i`: how many rows touch each column.
    pub fn column_weights(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.n_cols);
        for &(_, c, _) in &self.entries {
            w[c] += 1.0;
        }
        w
    }

    /// Columns with at least one entry, ascending.
    pub fn touched_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self.entries.iter().map(|e| e.1).collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for &(r, c, s) in &self.entries {
            m[(r, c)] += s;
        }
        m
    }
}

/// Consensus blocks for split regions.
///
/// Every copy bus contributes an angle row and a magnitude row, with `+1` on
/// the copy entry and `-1` on the owner's core entry.
pub fn build_consensus(regions: &[RegionModel]) -> Result<Vec<ConsensusBlock>> {
    let n_rows = 2 * regions.iter().map(|r| r.n_copy()).sum::<usize>();
    let mut blocks: Vec<ConsensusBlock> = regions
        .iter()
        .map(|r| ConsensusBlock {
            region: r.region,
            n_rows,
            n_cols: r.n_state(),
            entries: Vec::new(),
        })
        .collect();
    let mut row = 0;
    for (i, region) in regions.iter().enumerate() {
        let n_core = region.n_core();
        for (c, copy) in region.copies.iter().enumerate() {
            let j = copy
                .owner_region
                .checked_sub(1)
                .filter(|&j| j < regions.len() && j != i)
                .ok_or_else(|| {
                    Error::ProvenanceMismatch(format!(
                        "copy {} of region {} names region {}",
                        copy.owner_bus, region.region, copy.owner_region
                    ))
                })?;
            let owner = &regions[j];
            let matches = owner
                .case
                .buses
                .get(copy.owner_position)
                .is_some_and(|b| b.bus_id == copy.owner_bus)
                && owner.global_ids.get(copy.owner_position) == Some(&copy.global_id);
            if !matches {
                return Err(Error::ProvenanceMismatch(format!(
                    "copy of bus {} in region {} does not match region {}",
                    copy.owner_bus, region.region, copy.owner_region
                )));
            }
            let k = copy.owner_position;
            blocks[i].entries.push((row, region.theta_index(n_core + c), 1.0));
            blocks[j].entries.push((row, owner.theta_index(k), -1.0));
            blocks[i].entries.push((row + 1, region.v_index(n_core + c), 1.0));
            blocks[j].entries.push((row + 1, owner.v_index(k), -1.0));
            row += 2;
        }
    }
    Ok(blocks)
}

/// `sum_i A_i chi_i`.
pub fn consensus_residual(blocks: &[ConsensusBlock], chis: &[DVector<f64>]) -> DVector<f64> {
    let n = blocks.first().map(|b| b.n_rows).unwrap_or(0);
    let mut y = DVector::zeros(n);
    for (block, chi) in blocks.iter().zip(chis) {
        for &(r, c, s) in &block.entries {
            y[r] += s * chi[c];
        }
    }
    y
}
