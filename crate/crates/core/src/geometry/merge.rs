//! Region adjacency and recursive random merging of neighbouring regions.

use std::collections::BTreeSet;

use rand::Rng;

use super::polygon::{Point, Rect};
use super::Region;
use crate::error::{Error, Result};
use crate::rng::{streams, substream};

struct Edge {
    region: usize,
    a: Point,
    b: Point,
    bbox: Rect,
}

/// Regions are adjacent when some pair of their boundary segments is collinear
/// and overlaps over a positive length.
pub fn region_adjacency(regions: &[Region]) -> Vec<BTreeSet<usize>> {
    let extent = regions
        .iter()
        .filter_map(|r| r.shape.bbox())
        .reduce(|a, b| a.union(&b));
    let Some(extent) = extent else {
        return vec![BTreeSet::new(); regions.len()];
    };
    let tol = 1e-7 * extent.width().max(extent.height());
    let mut edges = Vec::new();
    for (ri, region) in regions.iter().enumerate() {
        for poly in region.shape.parts() {
            for ring in poly.rings() {
                let n = ring.len();
                for i in 0..n {
                    let (a, b) = (ring[i], ring[(i + 1) % n]);
                    if a.dist(b) > tol {
                        let bbox = Rect::of_points(&[a, b]).unwrap();
                        edges.push(Edge {
                            region: ri,
                            a,
                            b,
                            bbox,
                        });
                    }
                }
            }
        }
    }
    edges.sort_by(|x, y| x.bbox.min_x.total_cmp(&y.bbox.min_x));
    let mut adj = vec![BTreeSet::new(); regions.len()];
    for i in 0..edges.len() {
        let e = &edges[i];
        for f in &edges[i + 1..] {
            if f.bbox.min_x > e.bbox.max_x + tol {
                break;
            }
            if f.region == e.region || adj[e.region].contains(&f.region) {
                continue;
            }
            if segments_share_length(e, f, tol) {
                adj[e.region].insert(f.region);
                adj[f.region].insert(e.region);
            }
        }
    }
    adj
}

fn segments_share_length(e: &Edge, f: &Edge, tol: f64) -> bool {
    if e.bbox.min_y > f.bbox.max_y + tol || f.bbox.min_y > e.bbox.max_y + tol {
        return false;
    }
    let len = e.a.dist(e.b);
    let (ux, uy) = ((e.b.x - e.a.x) / len, (e.b.y - e.a.y) / len);
    let off = |p: Point| ((p.x - e.a.x) * uy - (p.y - e.a.y) * ux).abs();
    if off(f.a) > tol || off(f.b) > tol {
        return false;
    }
    let t = |p: Point| (p.x - e.a.x) * ux + (p.y - e.a.y) * uy;
    let (t0, t1) = (t(f.a).min(t(f.b)), t(f.a).max(t(f.b)));
    t1.min(len) - t0.max(0.0) > tol
}

fn components(adj: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    let mut out = Vec::new();
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut k = 0;
        while k < comp.len() {
            for &n in &adj[comp[k]] {
                if !seen[n] {
                    seen[n] = true;
                    comp.push(n);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Repeatedly merge a uniformly chosen region with a uniformly chosen neighbour
/// until `target_count` regions remain.
///
/// Merged regions keep the id of the region that was picked first and hold the
/// polygons of all members as parts of one multipolygon.
pub fn merge_regions(regions: &[Region], target_count: usize, seed: u64) -> Result<Vec<Region>> {
    merge_regions_with_members(regions, target_count, seed).map(|(merged, _)| merged)
}

/// [`merge_regions`] plus, per merged region, the ids of its original members.
pub fn merge_regions_with_members(
    regions: &[Region],
    target_count: usize,
    seed: u64,
) -> Result<(Vec<Region>, Vec<Vec<u64>>)> {
    if target_count == 0 || target_count > regions.len() {
        return Err(Error::invalid(format!(
            "target_count must be in [1, {}], got {target_count}",
            regions.len()
        )));
    }
    if target_count == regions.len() {
        let members = regions.iter().map(|r| vec![r.id]).collect();
        return Ok((regions.to_vec(), members));
    }
    let base_adj = region_adjacency(regions);
    let comps = components(&base_adj);
    if comps.len() > target_count {
        return Err(Error::Disconnected {
            target: target_count,
            components: comps
                .iter()
                .map(|c| c.iter().map(|&i| regions[i].id).collect())
                .collect(),
        });
    }
    let mut rng = substream(seed, streams::MERGE);
    // group index -> members; adjacency between live groups
    let mut members: Vec<Vec<usize>> = (0..regions.len()).map(|i| vec![i]).collect();
    let mut adj: Vec<BTreeSet<usize>> = base_adj;
    let mut alive: Vec<usize> = (0..regions.len()).collect();
    while alive.len() > target_count {
        let candidates: Vec<usize> = alive.iter().copied().filter(|&g| !adj[g].is_empty()).collect();
        let keep = candidates[rng.random_range(0..candidates.len())];
        let neigh: Vec<usize> = adj[keep].iter().copied().collect();
        let absorb = neigh[rng.random_range(0..neigh.len())];
        let moved = std::mem::take(&mut members[absorb]);
        members[keep].extend(moved);
        let absorbed_adj = std::mem::take(&mut adj[absorb]);
        for n in absorbed_adj {
            adj[n].remove(&absorb);
            if n != keep {
                adj[n].insert(keep);
                adj[keep].insert(n);
            }
        }
        adj[keep].remove(&keep);
        alive.retain(|&g| g != absorb);
    }
    let merged = alive
        .iter()
        .map(|&g| {
            let mut parts = Vec::new();
            for &i in &members[g] {
                parts.extend(regions[i].shape.parts().iter().cloned());
            }
            Region {
                id: regions[g].id,
                shape: super::MultiPolygon(parts),
            }
        })
        .collect();
    let ids = alive
        .iter()
        .map(|&g| {
            let mut ids: Vec<u64> = members[g].iter().map(|&i| regions[i].id).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    Ok((merged, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon::{MultiPolygon, Polygon};

    fn block(id: u64, x: f64, y: f64) -> Region {
        Region {
            id,
            shape: MultiPolygon::single(Polygon::new(Rect::new(x, y, x + 1.0, y + 1.0).ring())),
        }
    }

    #[test]
    fn two_by_two_block_merges_to_one() {
        let regions = vec![
            block(0, 0.0, 0.0),
            block(1, 1.0, 0.0),
            block(2, 0.0, 1.0),
            block(3, 1.0, 1.0),
        ];
        let adj = region_adjacency(&regions);
        assert_eq!(adj[0], BTreeSet::from([1, 2]));
        assert_eq!(adj[3], BTreeSet::from([1, 2]));
        let merged = merge_regions(&regions, 1, 3).unwrap();
        assert_eq!(merged.len(), 1);
        assert!((merged[0].shape.area() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identity_when_target_equals_count() {
        let regions = vec![block(0, 0.0, 0.0), block(1, 1.0, 0.0)];
        assert_eq!(merge_regions(&regions, 2, 0).unwrap(), regions);
    }

    #[test]
    fn disconnected_set_reports_components() {
        let regions = vec![block(0, 0.0, 0.0), block(1, 5.0, 5.0), block(2, 6.0, 5.0)];
        match merge_regions(&regions, 1, 0) {
            Err(Error::Disconnected { components, .. }) => {
                assert_eq!(components, vec![vec![0], vec![1, 2]]);
            }
            other => panic!("expected disconnected error, got {other:?}"),
        }
        assert_eq!(merge_regions(&regions, 2, 0).unwrap().len(), 2);
    }

    #[test]
    fn corner_touch_is_not_adjacency() {
        let regions = vec![block(0, 0.0, 0.0), block(1, 1.0, 1.0)];
        assert!(region_adjacency(&regions)[0].is_empty());
    }
}
