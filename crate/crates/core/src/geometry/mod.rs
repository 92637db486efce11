//! Planar geometry: the cell tiling, region polygons, overlap coefficients and
//! region merging.

pub mod grid;
pub mod merge;
pub mod overlap;
pub mod polygon;

use serde::{Deserialize, Serialize};

pub use grid::{build_hex_grid, CellShape, GridCell, HexGrid};
pub use merge::{merge_regions, merge_regions_with_members, region_adjacency};
pub use overlap::{build_overlap_map, overlap_coefficient, OverlapMap, RegionIssue};
pub use polygon::{MultiPolygon, Point, Polygon, Rect};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u64,
    pub shape: MultiPolygon,
}

impl Region {
    pub fn area(&self) -> f64 {
        self.shape.area()
    }
}

pub fn total_area(regions: &[Region]) -> f64 {
    regions.iter().map(Region::area).sum()
}

/// Local equirectangular projection anchored at a reference lon/lat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub lon0: f64,
    pub lat0: f64,
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

impl LocalProjection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        Self { lon0, lat0 }
    }

    pub fn forward(&self, lon: f64, lat: f64) -> Point {
        let k = std::f64::consts::PI / 180.0;
        Point::new(
            EARTH_RADIUS_M * (lon - self.lon0) * k * (self.lat0 * k).cos(),
            EARTH_RADIUS_M * (lat - self.lat0) * k,
        )
    }

    pub fn inverse(&self, p: Point) -> (f64, f64) {
        let k = std::f64::consts::PI / 180.0;
        (
            self.lon0 + p.x / (EARTH_RADIUS_M * (self.lat0 * k).cos()) / k,
            self.lat0 + p.y / EARTH_RADIUS_M / k,
        )
    }
}
