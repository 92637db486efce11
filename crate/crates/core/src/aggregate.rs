//! Region embeddings as overlap-weighted sums of cell embeddings.

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::geometry::OverlapMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `h = Σ o·e` over the cells a region overlaps.
    #[default]
    Overlap,
    /// Every overlapping cell counts with weight 1.
    Unweighted,
    /// Overlap weights divided by their sum.
    Normalized,
}

#[derive(Clone, Debug)]
pub struct RegionEmbeddings {
    pub ids: Vec<u64>,
    /// `n × d`, rows aligned with `ids`.
    pub h: Mat,
    /// Regions without any overlapping cell.
    pub empty: Vec<u64>,
}

pub fn aggregate_region_embeddings(
    e: &Mat,
    overlap: &OverlapMap,
    region_ids: &[u64],
    weighting: Weighting,
) -> Result<RegionEmbeddings> {
    let (m, d) = e.dim();
    let mut h = Mat::zeros((region_ids.len(), d));
    let mut empty = Vec::new();
    for (row, &id) in region_ids.iter().enumerate() {
        let cells = overlap.cells_of(id);
        if cells.is_empty() {
            log::warn!("region {id} overlaps no cell; using a zero embedding");
            empty.push(id);
            continue;
        }
        let total: f64 = cells.iter().map(|&(_, o)| o).sum();
        let mut out = h.row_mut(row);
        for &(c, o) in cells {
            if c >= m {
                return Err(Error::invalid(format!("region {id}: cell {c} not in embedding matrix ({m} rows)")));
            }
            let w = match weighting {
                Weighting::Overlap => o,
                Weighting::Unweighted => 1.0,
                Weighting::Normalized => o / total,
            };
            out.scaled_add(w, &e.row(c));
        }
    }
    Ok(RegionEmbeddings {
        ids: region_ids.to_vec(),
        h,
        empty,
    })
}
