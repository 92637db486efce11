//! Region–cell overlap coefficients: `Area(region ∩ cell) / Area(cell)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{GridCell, HexGrid};
use super::Region;
use crate::error::{Error, Result};

/// Relative area below which an intersection is treated as boundary noise, and
/// distance from 1 within which a cell counts as fully contained.
pub const AREA_TOLERANCE: f64 = 1e-9;

pub fn overlap_coefficient(region: &Region, cell: &GridCell) -> Result<f64> {
    if !(region.shape.area() > 0.0) {
        return Err(Error::invalid(format!(
            "region {} has non-positive area",
            region.id
        )));
    }
    Ok(snap(region.shape.intersection_area(&cell.polygon) / cell.area()))
}

fn snap(o: f64) -> f64 {
    if o < AREA_TOLERANCE {
        0.0
    } else if o > 1.0 - AREA_TOLERANCE {
        1.0
    } else {
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionIssue {
    pub region_id: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OverlapMap {
    /// Region id → `(cell id, coefficient)` sorted by cell id.
    pub entries: BTreeMap<u64, Vec<(usize, f64)>>,
    pub issues: Vec<RegionIssue>,
}

impl OverlapMap {
    pub fn cells_of(&self, region_id: u64) -> &[(usize, f64)] {
        self.entries.get(&region_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `{"<region id>": [[cell id, coeff], ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(id, cells)| {
                let list = cells
                    .iter()
                    .map(|&(c, o)| serde_json::json!([c, o]))
                    .collect();
                (id.to_string(), serde_json::Value::Array(list))
            })
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Format("overlap map must be a JSON object".into()))?;
        let mut entries = BTreeMap::new();
        for (k, list) in obj {
            let id: u64 = k
                .parse()
                .map_err(|_| Error::Format(format!("bad region id {k:?}")))?;
            let pairs: Vec<(usize, f64)> = serde_json::from_value(list.clone())?;
            entries.insert(id, pairs);
        }
        Ok(Self {
            entries,
            issues: Vec::new(),
        })
    }
}

/// Coefficients for every region against every cell it touches.
///
/// Regions that are degenerate or extend beyond the grid's extent are recorded
/// in [`OverlapMap::issues`]; regions partly outside still get entries for the
/// cells they do intersect.
pub fn build_overlap_map(regions: &[Region], grid: &HexGrid) -> OverlapMap {
    let extent = grid.extent();
    let tol = 1e-6 * extent.width().max(extent.height());
    let cell_boxes: Vec<_> = grid.cells.iter().map(GridCell::bbox).collect();
    let results: Vec<(u64, Vec<(usize, f64)>, Option<String>)> = regions
        .par_iter()
        .map(|region| {
            let area = region.shape.area();
            let Some(rb) = region.shape.bbox().filter(|_| area > 0.0) else {
                return (region.id, Vec::new(), Some("degenerate region polygon".to_string()));
            };
            let issue = (!extent.contains_rect(&rb, tol))
                .then(|| "region extends beyond the grid extent".to_string());
            let cells = grid
                .cells
                .iter()
                .zip(&cell_boxes)
                .filter(|(_, cb)| cb.intersects(&rb))
                .filter_map(|(cell, _)| {
                    let o = snap(region.shape.intersection_area(&cell.polygon) / cell.area());
                    (o > 0.0).then_some((cell.id, o))
                })
                .collect();
            (region.id, cells, issue)
        })
        .collect();
    let mut map = OverlapMap::default();
    for (id, cells, issue) in results {
        if let Some(message) = issue {
            map.issues.push(RegionIssue {
                region_id: id,
                message,
            });
        }
        map.entries.insert(id, cells);
    }
    map
}
