//! Per-cell POI and land-use counts, and the neighbour id matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::vocab::{NUM_LANDUSE, NUM_POI};
use crate::autograd::Mat;
use crate::geometry::{HexGrid, Point, Polygon};

/// A POI in the grid's planar frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub location: Point,
    pub category: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandUseZone {
    pub polygon: Polygon,
    pub kind: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct PoiBinning {
    /// `m × 15` counts.
    pub counts: Mat,
    /// POIs inside no cell.
    pub spill: usize,
    pub rejected: Vec<Rejection>,
}

pub fn bin_pois(pois: &[PoiRecord], grid: &HexGrid) -> PoiBinning {
    let mut counts = Array2::zeros((grid.len(), NUM_POI));
    let mut spill = 0;
    let mut rejected = Vec::new();
    for (i, poi) in pois.iter().enumerate() {
        if poi.category >= NUM_POI {
            rejected.push(Rejection {
                index: i,
                reason: format!("category {} out of range", poi.category),
            });
            continue;
        }
        match grid.locate(poi.location) {
            Some(cell) => counts[[cell, poi.category]] += 1.0,
            None => spill += 1,
        }
    }
    PoiBinning {
        counts,
        spill,
        rejected,
    }
}

#[derive(Clone, Debug)]
pub struct LanduseBinning {
    /// `m × 20` zone counts.
    pub counts: Mat,
    pub rejected: Vec<Rejection>,
}

/// Count, per cell and type, the zones that intersect the cell with positive
/// area.
pub fn bin_landuse(zones: &[LandUseZone], grid: &HexGrid) -> LanduseBinning {
    let mut counts = Array2::zeros((grid.len(), NUM_LANDUSE));
    let mut rejected = Vec::new();
    let cell_area = grid.cell_area();
    for (i, zone) in zones.iter().enumerate() {
        if zone.kind >= NUM_LANDUSE {
            rejected.push(Rejection {
                index: i,
                reason: format!("land-use type {} out of range", zone.kind),
            });
            continue;
        }
        let Some(zb) = zone.polygon.bbox().filter(|_| zone.polygon.area() > 0.0) else {
            rejected.push(Rejection {
                index: i,
                reason: "degenerate zone polygon".into(),
            });
            continue;
        };
        for cell in &grid.cells {
            if !cell.bbox().intersects(&zb) {
                continue;
            }
            if zone.polygon.intersection_area(&cell.polygon) > 1e-9 * cell_area {
                counts[[cell.id, zone.kind]] += 1.0;
            }
        }
    }
    LanduseBinning { counts, rejected }
}

/// `m × 6` neighbour ids in slot order, `-1` where absent.
pub fn neighbor_vector(grid: &HexGrid) -> Array2<i64> {
    let mut out = Array2::from_elem((grid.len(), 6), -1i64);
    for (i, slots) in grid.neighbor_slots.iter().enumerate() {
        for (k, s) in slots.iter().enumerate() {
            if let Some(id) = s {
                out[[i, k]] = *id as i64;
            }
        }
    }
    out
}
