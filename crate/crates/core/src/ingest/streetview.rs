//! Street-view sampling points along a road network.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{HexGrid, Point};
use crate::rng::{streams, substream};

pub const SAMPLE_INTERVAL_M: f64 = 100.0;
pub const MIN_SEPARATION_M: f64 = 20.0;
pub const MIN_POINTS_PER_CELL: usize = 5;
pub const HEADINGS: [u16; 4] = [0, 90, 180, 270];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvPoint {
    pub location: Point,
    /// False for points added to pad sparse cells.
    pub from_road: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvRef {
    pub cell: usize,
    pub location: Point,
    pub heading: u16,
    pub token: String,
}

#[derive(Clone, Debug, Default)]
pub struct StreetViewSample {
    pub per_cell: Vec<Vec<SvPoint>>,
    /// Road points after de-duplication, before cell assignment.
    pub road_points: usize,
    pub padded_points: usize,
    /// The road network was empty and every cell was padded.
    pub fallback: bool,
}

impl StreetViewSample {
    pub fn total_points(&self) -> usize {
        self.per_cell.iter().map(Vec::len).sum()
    }
}

/// Points every [`SAMPLE_INTERVAL_M`] of arc length along a polyline,
/// starting at its first vertex.
pub fn interval_points(line: &[Point], interval: f64) -> Vec<Point> {
    let mut out = Vec::new();
    if line.is_empty() {
        return out;
    }
    out.push(line[0]);
    let mut next = interval;
    let mut walked = 0.0;
    for seg in line.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = a.dist(b);
        while next <= walked + len + 1e-9 * interval {
            let t = ((next - walked) / len).min(1.0);
            out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
            next += interval;
        }
        walked += len;
    }
    out
}

/// Greedy filter keeping points at least `min_sep` from every kept point.
pub fn dedup_points(points: &[Point], min_sep: f64) -> Vec<Point> {
    let key = |p: Point| ((p.x / min_sep).floor() as i64, (p.y / min_sep).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<Point>> = HashMap::new();
    let mut kept = Vec::new();
    for &p in points {
        let (kx, ky) = key(p);
        let close = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                buckets
                    .get(&(kx + dx, ky + dy))
                    .is_some_and(|b| b.iter().any(|q| q.dist(p) < min_sep))
            })
        });
        if !close {
            buckets.entry((kx, ky)).or_default().push(p);
            kept.push(p);
        }
    }
    kept
}

fn random_point_in_cell<R: Rng>(grid: &HexGrid, cell: usize, rng: &mut R) -> Point {
    let c = &grid.cells[cell];
    let b = c.bbox();
    loop {
        let p = Point::new(
            rng.random_range(b.min_x..b.max_x),
            rng.random_range(b.min_y..b.max_y),
        );
        if crate::geometry::polygon::convex_contains(&c.polygon, p, 0.0) {
            return p;
        }
    }
}

/// Sample road points, drop near-duplicates, assign them to cells and pad every
/// cell to at least [`MIN_POINTS_PER_CELL`] points with uniform random points.
pub fn sample_streetview_points(roads: &[Vec<Point>], grid: &HexGrid, seed: u64) -> StreetViewSample {
    let raw: Vec<Point> = roads
        .iter()
        .flat_map(|r| interval_points(r, SAMPLE_INTERVAL_M))
        .collect();
    let kept = dedup_points(&raw, MIN_SEPARATION_M);
    let mut per_cell: Vec<Vec<SvPoint>> = vec![Vec::new(); grid.len()];
    for &p in &kept {
        if let Some(c) = grid.locate(p) {
            per_cell[c].push(SvPoint {
                location: p,
                from_road: true,
            });
        }
    }
    let mut rng = substream(seed, streams::STREETVIEW);
    let mut padded = 0;
    for (cell, pts) in per_cell.iter_mut().enumerate() {
        while pts.len() < MIN_POINTS_PER_CELL {
            pts.push(SvPoint {
                location: random_point_in_cell(grid, cell, &mut rng),
                from_road: false,
            });
            padded += 1;
        }
    }
    StreetViewSample {
        per_cell,
        road_points: kept.len(),
        padded_points: padded,
        fallback: raw.is_empty(),
    }
}

/// Four headed image refs per sampled point, with tokens from `token`.
pub fn streetview_refs(
    sample: &StreetViewSample,
    mut token: impl FnMut(usize, Point, u16) -> String,
) -> Vec<Vec<SvRef>> {
    sample
        .per_cell
        .iter()
        .enumerate()
        .map(|(cell, pts)| {
            pts.iter()
                .flat_map(|p| HEADINGS.iter().map(move |&h| (p.location, h)))
                .map(|(location, heading)| SvRef {
                    cell,
                    location,
                    heading,
                    token: token(cell, location, heading),
                })
                .collect()
        })
        .collect()
}
