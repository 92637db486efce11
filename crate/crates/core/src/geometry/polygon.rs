//! Planar polygons, areas and convex clipping.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    let (u, v) = (a.sub(o), b.sub(o));
    u.x * v.y - u.y * v.x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn of_points<'a>(pts: impl IntoIterator<Item = &'a Point>) -> Option<Rect> {
        let mut it = pts.into_iter();
        let first = it.next()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in it {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect::new(
            self.min_x.min(o.min_x),
            self.min_y.min(o.min_y),
            self.max_x.max(o.max_x),
            self.max_y.max(o.max_y),
        )
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min_x <= o.max_x && o.min_x <= self.max_x && self.min_y <= o.max_y && o.min_y <= self.max_y
    }

    pub fn contains_rect(&self, o: &Rect, tol: f64) -> bool {
        o.min_x >= self.min_x - tol
            && o.min_y >= self.min_y - tol
            && o.max_x <= self.max_x + tol
            && o.max_y <= self.max_y + tol
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    /// Counter-clockwise corner ring.
    pub fn ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.min_x, self.min_y),
            Point::new(self.max_x, self.min_y),
            Point::new(self.max_x, self.max_y),
            Point::new(self.min_x, self.max_y),
        ]
    }
}

/// A simple polygon: an exterior ring and optional holes. Rings are stored open
/// (the first vertex is not repeated).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    #[serde(default)]
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>) -> Self {
        Self {
            exterior: open_ring(exterior),
            holes: Vec::new(),
        }
    }

    pub fn with_holes(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Self {
            exterior: open_ring(exterior),
            holes: holes.into_iter().map(open_ring).collect(),
        }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.exterior).abs()
            - self.holes.iter().map(|h| signed_area(h).abs()).sum::<f64>()
    }

    pub fn bbox(&self) -> Option<Rect> {
        Rect::of_points(&self.exterior)
    }

    pub fn contains(&self, p: Point) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    /// Area of the intersection with a counter-clockwise convex polygon.
    pub fn intersection_area(&self, convex: &[Point]) -> f64 {
        let ext = ring_intersection_area(&self.exterior, convex);
        let holes: f64 = self
            .holes
            .iter()
            .map(|h| ring_intersection_area(h, convex))
            .sum();
        (ext - holes).max(0.0)
    }

    pub fn rings(&self) -> impl Iterator<Item = &Vec<Point>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }
}

/// Union of non-overlapping polygons. Parts may share boundary segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiPolygon(pub Vec<Polygon>);

impl MultiPolygon {
    pub fn single(p: Polygon) -> Self {
        Self(vec![p])
    }

    pub fn area(&self) -> f64 {
        self.0.iter().map(Polygon::area).sum()
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.0
            .iter()
            .filter_map(Polygon::bbox)
            .reduce(|a, b| a.union(&b))
    }

    pub fn contains(&self, p: Point) -> bool {
        self.0.iter().any(|poly| poly.contains(p))
    }

    pub fn intersection_area(&self, convex: &[Point]) -> f64 {
        self.0.iter().map(|p| p.intersection_area(convex)).sum()
    }

    pub fn parts(&self) -> &[Polygon] {
        &self.0
    }
}

fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

/// Shoelace area, positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Even-odd crossing test.
pub fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Closed containment test for a counter-clockwise convex polygon, with an
/// absolute tolerance on the edge distance.
pub fn convex_contains(convex: &[Point], p: Point, tol: f64) -> bool {
    let n = convex.len();
    (0..n).all(|i| {
        let (a, b) = (convex[i], convex[(i + 1) % n]);
        let len = a.dist(b);
        cross(a, b, p) / len >= -tol
    })
}

/// Sutherland–Hodgman clip of `subject` against each edge of the
/// counter-clockwise convex polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        out = clip_halfplane(&out, |p| cross(a, b, p));
    }
    out
}

/// Keep the part of `ring` where `side(p) >= 0`; `side` must be affine.
pub fn clip_halfplane(ring: &[Point], side: impl Fn(Point) -> f64) -> Vec<Point> {
    let mut out = Vec::with_capacity(ring.len() + 2);
    let n = ring.len();
    for i in 0..n {
        let cur = ring[i];
        let prev = ring[(i + n - 1) % n];
        let (sc, sp) = (side(cur), side(prev));
        if sc >= 0.0 {
            if sp < 0.0 {
                out.push(lerp(prev, cur, sp / (sp - sc)));
            }
            out.push(cur);
        } else if sp >= 0.0 {
            out.push(lerp(prev, cur, sp / (sp - sc)));
        }
    }
    out
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

/// Unsigned area of (ring ∩ convex) for a simple ring of either orientation.
///
/// The ring is fanned into triangles from its first vertex; each triangle is
/// clipped against the convex polygon and contributes with the sign of its
/// orientation. Winding numbers of the fan sum to the ring's winding number, so
/// the signed sum is exact for concave rings.
pub fn ring_intersection_area(ring: &[Point], convex: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let orient = signed_area(ring).signum();
    let mut total = 0.0;
    let p0 = ring[0];
    for k in 1..n - 1 {
        let (p1, p2) = (ring[k], ring[k + 1]);
        let tri_area = 0.5 * cross(p0, p1, p2);
        if tri_area == 0.0 {
            continue;
        }
        let tri = if tri_area > 0.0 {
            [p0, p1, p2]
        } else {
            [p0, p2, p1]
        };
        let clipped = clip_convex(&tri, convex);
        total += tri_area.signum() * signed_area(&clipped).abs();
    }
    (orient * total).max(0.0)
}

/// True when the convex polygon has positive turn at every vertex.
pub fn is_convex_ccw(ring: &[Point]) -> bool {
    let n = ring.len();
    n >= 3 && (0..n).all(|i| cross(ring[i], ring[(i + 1) % n], ring[(i + 2) % n]) > 0.0)
}
