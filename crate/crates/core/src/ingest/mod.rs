//! Input loading, per-cell feature binning, cell descriptions and the
//! synthetic city.

pub mod binning;
pub mod describe;
pub mod loaders;
pub mod streetview;
pub mod synth;
pub mod vocab;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use binning::{bin_landuse, bin_pois, neighbor_vector, LandUseZone, PoiRecord, Rejection};
pub use describe::{compose_cell_description, DescriptionConfig, InstructionVariant};
pub use streetview::{sample_streetview_points, SvRef};
pub use synth::{generate_synthetic_city, merge_task_targets, SynthParams, SyntheticCity};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::geometry::{HexGrid, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_name: String,
    pub region_ids: Vec<u64>,
    pub targets: Vec<f64>,
}

impl TaskDataset {
    pub fn validate(&self) -> Result<()> {
        if self.region_ids.len() != self.targets.len() {
            return Err(Error::invalid(format!(
                "task {}: {} region ids but {} targets",
                self.task_name,
                self.region_ids.len(),
                self.targets.len()
            )));
        }
        if let Some(k) = self.targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!(
                "task {}: non-finite target for region {}",
                self.task_name, self.region_ids[k]
            )));
        }
        Ok(())
    }

    /// Targets reordered to follow `region_ids`.
    pub fn aligned(&self, region_ids: &[u64]) -> Result<Vec<f64>> {
        region_ids
            .iter()
            .map(|id| {
                self.region_ids
                    .iter()
                    .position(|r| r == id)
                    .map(|k| self.targets[k])
                    .ok_or_else(|| Error::invalid(format!("task {}: no target for region {id}", self.task_name)))
            })
            .collect()
    }
}

/// One image reference from a manifest, located either by cell id or by a
/// planar point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cell_id: Option<usize>,
    pub point: Option<Point>,
    pub heading: Option<u16>,
    pub uri: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub poi_spill: usize,
    pub poi_rejected: Vec<Rejection>,
    pub landuse_rejected: Vec<Rejection>,
    pub sv_road_points: usize,
    pub sv_padded_points: usize,
    pub sv_fallback: bool,
    pub sv_borrowed_cells: usize,
}

#[derive(Clone, Debug)]
pub struct FeatureBundle {
    /// `m × 15`.
    pub poi: Mat,
    /// `m × 20`.
    pub landuse: Mat,
    /// `m × 6`, `-1` padded.
    pub neighbors: Array2<i64>,
    pub satellite_refs: Vec<String>,
    pub streetview_refs: Vec<Vec<SvRef>>,
    pub descriptions: Vec<String>,
    pub report: IngestReport,
}

impl FeatureBundle {
    pub fn len(&self) -> usize {
        self.poi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw planar inputs for one city.
#[derive(Clone, Debug, Default)]
pub struct RawInputs {
    pub pois: Vec<PoiRecord>,
    pub landuse: Vec<LandUseZone>,
    pub roads: Vec<Vec<Point>>,
    /// Per-cell addresses; missing cells get a placeholder.
    pub addresses: Option<Vec<String>>,
    pub satellite_manifest: Option<Vec<ManifestEntry>>,
    pub streetview_manifest: Option<Vec<ManifestEntry>>,
}

fn counts_csv(row: ndarray::ArrayView1<f64>) -> String {
    row.iter()
        .map(|c| format!("{}", c.round() as u64))
        .collect::<Vec<_>>()
        .join(",")
}

/// Token for a synthetic image that carries the cell's binned features as
/// structured fields, so that stub encoders can embed similar cells nearby.
pub fn feature_token(prefix: &str, poi: ndarray::ArrayView1<f64>, landuse: ndarray::ArrayView1<f64>) -> String {
    format!("{prefix}|poi={};lu={}", counts_csv(poi), counts_csv(landuse))
}

pub fn build_feature_bundle(
    grid: &HexGrid,
    raw: &RawInputs,
    desc: &DescriptionConfig,
    seed: u64,
) -> Result<FeatureBundle> {
    let m = grid.len();
    let pb = bin_pois(&raw.pois, grid);
    let lb = bin_landuse(&raw.landuse, grid);
    let mut report = IngestReport {
        poi_spill: pb.spill,
        poi_rejected: pb.rejected,
        landuse_rejected: lb.rejected,
        ..Default::default()
    };
    let (poi, landuse) = (pb.counts, lb.counts);

    let satellite_refs = match &raw.satellite_manifest {
        Some(entries) => {
            let mut refs: Vec<Option<String>> = vec![None; m];
            for e in entries {
                let cell = e
                    .cell_id
                    .or_else(|| e.point.and_then(|p| grid.locate(p)))
                    .filter(|&c| c < m);
                if let Some(c) = cell {
                    refs[c].get_or_insert_with(|| e.uri.clone());
                }
            }
            refs.into_iter()
                .enumerate()
                .map(|(c, r)| r.ok_or_else(|| Error::invalid(format!("no satellite image for cell {c}"))))
                .collect::<Result<Vec<_>>>()?
        }
        None => (0..m)
            .map(|c| feature_token(&format!("sat/{seed}/{c}"), poi.row(c), landuse.row(c)))
            .collect(),
    };

    let streetview_refs = match &raw.streetview_manifest {
        Some(entries) => {
            let mut per_cell: Vec<Vec<SvRef>> = vec![Vec::new(); m];
            for e in entries {
                let cell = e
                    .cell_id
                    .or_else(|| e.point.and_then(|p| grid.locate(p)))
                    .filter(|&c| c < m);
                if let Some(c) = cell {
                    per_cell[c].push(SvRef {
                        cell: c,
                        location: e.point.unwrap_or(grid.cells[c].center),
                        heading: e.heading.unwrap_or(0),
                        token: e.uri.clone(),
                    });
                }
            }
            report.sv_borrowed_cells = borrow_from_neighbors(grid, &mut per_cell)?;
            per_cell
        }
        None => {
            let sample = sample_streetview_points(&raw.roads, grid, seed);
            report.sv_road_points = sample.road_points;
            report.sv_padded_points = sample.padded_points;
            report.sv_fallback = sample.fallback;
            streetview::streetview_refs(&sample, |c, p, h| {
                feature_token(
                    &format!("sv/{seed}/{c}/{:.1},{:.1}/{h}", p.x, p.y),
                    poi.row(c),
                    landuse.row(c),
                )
            })
        }
    };

    let descriptions = (0..m)
        .map(|c| {
            let address = raw
                .addresses
                .as_ref()
                .and_then(|a| a.get(c))
                .map_or("address unavailable", String::as_str);
            let row: Vec<f64> = poi.row(c).to_vec();
            compose_cell_description(&grid.cells[c], &row, address, desc)
        })
        .collect();

    Ok(FeatureBundle {
        neighbors: neighbor_vector(grid),
        poi,
        landuse,
        satellite_refs,
        streetview_refs,
        descriptions,
        report,
    })
}

/// Give every empty cell the images of the nearest non-empty cells, searching
/// outward ring by ring over the grid adjacency. Returns the number of cells
/// that borrowed.
fn borrow_from_neighbors(grid: &HexGrid, per_cell: &mut [Vec<SvRef>]) -> Result<usize> {
    if per_cell.iter().all(Vec::is_empty) {
        return Err(Error::invalid("street-view manifest matched no grid cell"));
    }
    let was_empty: Vec<bool> = per_cell.iter().map(Vec::is_empty).collect();
    let empty: Vec<usize> = (0..per_cell.len()).filter(|&c| was_empty[c]).collect();
    for &c in &empty {
        let mut seen = vec![false; per_cell.len()];
        seen[c] = true;
        let mut frontier = vec![c];
        loop {
            let mut next = Vec::new();
            for &f in &frontier {
                for &n in &grid.adjacency[f] {
                    if !seen[n] {
                        seen[n] = true;
                        next.push(n);
                    }
                }
            }
            next.sort_unstable();
            let found: Vec<SvRef> = next
                .iter()
                .filter(|&&n| !was_empty[n])
                .flat_map(|&n| per_cell[n].iter().cloned())
                .collect();
            if !found.is_empty() {
                per_cell[c] = found.into_iter().map(|r| SvRef { cell: c, ..r }).collect();
                break;
            }
            if next.is_empty() {
                return Err(Error::invalid(format!("cell {c} has no reachable street-view images")));
            }
            frontier = next;
        }
    }
    Ok(empty.len())
}
