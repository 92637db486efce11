//! Uniform tilings of an area of interest.
//!
//! Hexagons are pointy-top in axial coordinates `(q, r)`: the centre of cell
//! `(q, r)` sits at `origin + (√3·s·(q + r/2), 1.5·s·r)` where `s` is the edge
//! length and the origin is the bounding box's lower-left corner. Cell ids are
//! assigned row-major by `(r, q)`. Square cells use `(q, r)` as column/row of an
//! axis-aligned lattice with the same origin.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::polygon::{clip_convex, convex_contains, signed_area, Point, Rect};
use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellShape {
    #[default]
    Hex,
    Square,
}

/// Neighbour slot order used by [`HexGrid::neighbor_slots`].
pub const HEX_DIRECTIONS: [(&str, (i64, i64)); 6] = [
    ("E", (1, 0)),
    ("NE", (0, 1)),
    ("NW", (-1, 1)),
    ("W", (-1, 0)),
    ("SW", (0, -1)),
    ("SE", (1, -1)),
];

/// Square cells fill the first four slots (E, N, W, S); the rest stay empty.
pub const SQUARE_DIRECTIONS: [(&str, (i64, i64)); 4] =
    [("E", (1, 0)), ("N", (0, 1)), ("W", (-1, 0)), ("S", (0, -1))];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: usize,
    pub q: i64,
    pub r: i64,
    pub center: Point,
    /// Counter-clockwise vertices.
    pub polygon: Vec<Point>,
    pub edge_length: f64,
}

impl GridCell {
    pub fn area(&self) -> f64 {
        signed_area(&self.polygon)
    }

    pub fn bbox(&self) -> Rect {
        Rect::of_points(&self.polygon).expect("cell has vertices")
    }

    pub fn shape(&self) -> CellShape {
        if self.polygon.len() == 4 {
            CellShape::Square
        } else {
            CellShape::Hex
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HexGrid {
    pub shape: CellShape,
    pub edge_length: f64,
    pub bbox: Rect,
    pub cells: Vec<GridCell>,
    /// Sorted neighbour ids per cell.
    pub adjacency: Vec<Vec<usize>>,
    /// Neighbour id per direction slot, `None` where the tiling ends.
    pub neighbor_slots: Vec<[Option<usize>; 6]>,
    #[serde(skip)]
    index: HashMap<(i64, i64), usize>,
}

pub fn hex_polygon(center: Point, edge: f64) -> Vec<Point> {
    (0..6)
        .map(|k| {
            let theta = std::f64::consts::PI / 180.0 * (30.0 + 60.0 * k as f64);
            Point::new(center.x + edge * theta.cos(), center.y + edge * theta.sin())
        })
        .collect()
}

fn square_polygon(center: Point, edge: f64) -> Vec<Point> {
    let h = 0.5 * edge;
    Rect::new(center.x - h, center.y - h, center.x + h, center.y + h).ring()
}

/// Pointy-top hexagonal tiling of `bbox`.
pub fn build_hex_grid(bbox: Rect, edge_length: f64) -> Result<HexGrid> {
    HexGrid::build(bbox, edge_length, CellShape::Hex)
}

impl HexGrid {
    pub fn build(bbox: Rect, edge_length: f64, shape: CellShape) -> Result<Self> {
        if !(edge_length > 0.0) || !edge_length.is_finite() {
            return Err(Error::invalid(format!("edge_length must be positive, got {edge_length}")));
        }
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::invalid("bounding box must have positive width and height"));
        }
        let s = edge_length;
        let bbox_ring = bbox.ring();
        let mut cells = Vec::new();
        let (r_range, q_range): (std::ops::RangeInclusive<i64>, Box<dyn Fn(i64) -> std::ops::RangeInclusive<i64>>) =
            match shape {
                CellShape::Hex => {
                    let r0 = ((-s) / (1.5 * s)).floor() as i64 - 1;
                    let r1 = ((bbox.height() + s) / (1.5 * s)).ceil() as i64 + 1;
                    let w = SQRT3 * s;
                    let width = bbox.width();
                    (
                        r0..=r1,
                        Box::new(move |r| {
                            let q0 = ((-w) / w - 0.5 * r as f64).floor() as i64 - 1;
                            let q1 = ((width + w) / w - 0.5 * r as f64).ceil() as i64 + 1;
                            q0..=q1
                        }),
                    )
                }
                CellShape::Square => {
                    let r1 = (bbox.height() / s).ceil() as i64;
                    let width = bbox.width();
                    (-1..=r1, Box::new(move |_| -1..=(width / s).ceil() as i64))
                }
            };
        for r in r_range {
            for q in q_range(r) {
                let center = Self::center_of(shape, bbox, s, q, r);
                let polygon = match shape {
                    CellShape::Hex => hex_polygon(center, s),
                    CellShape::Square => square_polygon(center, s),
                };
                let inter = signed_area(&clip_convex(&polygon, &bbox_ring)).abs();
                if inter > 1e-9 * signed_area(&polygon) {
                    cells.push(GridCell {
                        id: cells.len(),
                        q,
                        r,
                        center,
                        polygon,
                        edge_length: s,
                    });
                }
            }
        }
        Ok(Self::from_cells(shape, edge_length, bbox, cells))
    }

    fn from_cells(shape: CellShape, edge_length: f64, bbox: Rect, cells: Vec<GridCell>) -> Self {
        let index: HashMap<(i64, i64), usize> =
            cells.iter().map(|c| ((c.q, c.r), c.id)).collect();
        let dirs: Vec<(i64, i64)> = match shape {
            CellShape::Hex => HEX_DIRECTIONS.iter().map(|d| d.1).collect(),
            CellShape::Square => SQUARE_DIRECTIONS.iter().map(|d| d.1).collect(),
        };
        let mut neighbor_slots = Vec::with_capacity(cells.len());
        let mut adjacency = Vec::with_capacity(cells.len());
        for c in &cells {
            let mut slots = [None; 6];
            for (k, (dq, dr)) in dirs.iter().enumerate() {
                slots[k] = index.get(&(c.q + dq, c.r + dr)).copied();
            }
            let mut adj: Vec<usize> = slots.iter().flatten().copied().collect();
            adj.sort_unstable();
            neighbor_slots.push(slots);
            adjacency.push(adj);
        }
        Self {
            shape,
            edge_length,
            bbox,
            cells,
            adjacency,
            neighbor_slots,
            index,
        }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.cells.iter().map(|c| ((c.q, c.r), c.id)).collect();
    }

    fn center_of(shape: CellShape, bbox: Rect, s: f64, q: i64, r: i64) -> Point {
        match shape {
            CellShape::Hex => Point::new(
                bbox.min_x + SQRT3 * s * (q as f64 + 0.5 * r as f64),
                bbox.min_y + 1.5 * s * r as f64,
            ),
            CellShape::Square => Point::new(
                bbox.min_x + s * (q as f64 + 0.5),
                bbox.min_y + s * (r as f64 + 0.5),
            ),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_area(&self) -> f64 {
        match self.shape {
            CellShape::Hex => 1.5 * SQRT3 * self.edge_length * self.edge_length,
            CellShape::Square => self.edge_length * self.edge_length,
        }
    }

    /// Bounding box of all cell polygons.
    pub fn extent(&self) -> Rect {
        self.cells
            .iter()
            .map(GridCell::bbox)
            .reduce(|a, b| a.union(&b))
            .unwrap_or(self.bbox)
    }

    pub fn cell_at_axial(&self, q: i64, r: i64) -> Option<usize> {
        self.index.get(&(q, r)).copied()
    }

    /// Cell containing `p`; points on shared boundaries go to the lowest id.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let s = self.edge_length;
        let tol = 1e-9 * s;
        let (q, r) = match self.shape {
            CellShape::Hex => {
                let rf = (p.y - self.bbox.min_y) / (1.5 * s);
                let qf = (p.x - self.bbox.min_x) / (SQRT3 * s) - 0.5 * rf;
                axial_round(qf, rf)
            }
            CellShape::Square => (
                ((p.x - self.bbox.min_x) / s).floor() as i64,
                ((p.y - self.bbox.min_y) / s).floor() as i64,
            ),
        };
        let mut best: Option<usize> = None;
        for dq in -1..=1 {
            for dr in -1..=1 {
                if let Some(id) = self.cell_at_axial(q + dq, r + dr) {
                    if convex_contains(&self.cells[id].polygon, p, tol)
                        && best.is_none_or(|b| id < b)
                    {
                        best = Some(id);
                    }
                }
            }
        }
        best
    }
}

fn axial_round(q: f64, r: f64) -> (i64, i64) {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    (rq as i64, rr as i64)
}
