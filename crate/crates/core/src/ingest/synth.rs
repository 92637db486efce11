//! A small self-contained synthetic city with planted, auditable targets.
//!
//! Districts with distinct POI and land-use profiles drive per-cell feature
//! intensities. Each task's target is a cell-level field that is linear in the
//! cell's POI and land-use counts plus a neighbourhood-density term, summed to
//! regions with overlap weights and perturbed by Gaussian noise. Because the
//! field is additive, targets of merged regions are sums of member targets.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::binning::{bin_landuse, bin_pois, LandUseZone, PoiRecord};
use super::vocab::{NUM_LANDUSE, NUM_POI};
use super::{RawInputs, TaskDataset};
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::geometry::polygon::clip_halfplane;
use crate::geometry::{
    build_overlap_map, merge_regions_with_members, CellShape, HexGrid, MultiPolygon, OverlapMap,
    Point, Polygon, Rect, Region,
};
use crate::rng::{streams, substream};

const DISTRICT_NAMES: [&str; 12] = [
    "Northgate", "Riverside", "Old Town", "Harbor", "Eastfield", "Westbrook", "Southpark",
    "Hillcrest", "Millbank", "Lakeview", "Cedar Heights", "Ironworks",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Fixed standard deviation.
    Sigma(f64),
    /// σ chosen so that the noiseless target explains this share of the
    /// noisy target's variance.
    Ceiling(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub noise: Noise,
    /// Relative weight of the neighbourhood-density term; 0 gives a purely
    /// linear task.
    pub nonlinear: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Side of the square study area in metres.
    pub extent_m: f64,
    pub edge_length: f64,
    pub shape: CellShape,
    pub n_regions: usize,
    /// Voronoi seeds; regions are merged down to `n_regions` when larger.
    pub voronoi_seeds: usize,
    pub n_districts: usize,
    /// Mean POIs per cell at average density.
    pub poi_per_cell: f64,
    pub landuse_zones: usize,
    pub road_spacing_m: f64,
    /// Anchor used when exporting lon/lat files.
    pub lon0: f64,
    pub lat0: f64,
    pub tasks: Vec<TaskSpec>,
}

impl Default for SynthParams {
    fn default() -> Self {
        let task = |name: &str, nonlinear| TaskSpec {
            name: name.into(),
            noise: Noise::Ceiling(0.95),
            nonlinear,
        };
        Self {
            extent_m: 6400.0,
            edge_length: 200.0,
            shape: CellShape::Hex,
            n_regions: 60,
            voronoi_seeds: 60,
            n_districts: 6,
            poi_per_cell: 12.0,
            landuse_zones: 320,
            road_spacing_m: 450.0,
            lon0: -73.95,
            lat0: 40.72,
            tasks: vec![
                task("crime", 0.2),
                task("checkin", 0.1),
                task("service_call", 0.2),
                task("population", 0.1),
            ],
        }
    }
}

/// Generating coefficients of one task, kept for auditing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCoefficients {
    pub name: String,
    pub poi: Vec<f64>,
    pub landuse: Vec<f64>,
    pub nonlinear: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticCity {
    pub seed: u64,
    pub params: SynthParams,
    pub bbox: Rect,
    pub regions: Vec<Region>,
    pub pois: Vec<PoiRecord>,
    pub landuse: Vec<LandUseZone>,
    pub roads: Vec<Vec<Point>>,
    /// One address per grid cell.
    pub addresses: Vec<String>,
    pub tasks: Vec<TaskDataset>,
    pub coefficients: Vec<TaskCoefficients>,
    /// Per task, the noiseless cell-level field.
    pub cell_signal: Vec<Vec<f64>>,
    /// Per task, the noise draw of each region, in region order.
    pub region_noise: Vec<Vec<f64>>,
}

struct District {
    center: Point,
    poi_profile: [f64; NUM_POI],
    landuse_profile: [f64; NUM_LANDUSE],
}

fn dirichlet<R: Rng, const N: usize>(rng: &mut R, alpha: f64, boost: &[usize]) -> [f64; N] {
    let g = Gamma::new(alpha, 1.0).expect("valid gamma");
    let mut out = [0.0; N];
    for x in out.iter_mut() {
        *x = g.sample(rng);
    }
    for &b in boost {
        out[b] += 1.5;
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

fn district_weights(districts: &[District], p: Point, bandwidth: f64) -> Vec<f64> {
    let w: Vec<f64> = districts
        .iter()
        .map(|d| (-d.center.dist(p).powi(2) / (2.0 * bandwidth * bandwidth)).exp() + 1e-12)
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn random_point_in<R: Rng>(poly: &[Point], rng: &mut R) -> Point {
    let b = Rect::of_points(poly).expect("non-empty polygon");
    loop {
        let p = Point::new(
            rng.random_range(b.min_x..b.max_x),
            rng.random_range(b.min_y..b.max_y),
        );
        if crate::geometry::polygon::ring_contains(poly, p) {
            return p;
        }
    }
}

/// Voronoi cells of `seeds` clipped to `bbox`.
pub fn voronoi_regions(seeds: &[Point], bbox: Rect) -> Vec<Region> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut ring = bbox.ring();
            for (j, &t) in seeds.iter().enumerate() {
                if i == j || ring.is_empty() {
                    continue;
                }
                let mid = Point::new(0.5 * (s.x + t.x), 0.5 * (s.y + t.y));
                let (dx, dy) = (t.x - s.x, t.y - s.y);
                ring = clip_halfplane(&ring, |p| -((p.x - mid.x) * dx + (p.y - mid.y) * dy));
            }
            Region {
                id: i as u64,
                shape: MultiPolygon::single(Polygon::new(ring)),
            }
        })
        .collect()
}

/// Overlap-weighted region sums of a cell-level field.
pub fn region_sums(field: &[f64], regions: &[Region], overlap: &OverlapMap) -> Vec<f64> {
    regions
        .iter()
        .map(|r| overlap.cells_of(r.id).iter().map(|&(c, o)| o * field[c]).sum())
        .collect()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

pub fn generate_synthetic_city(seed: u64, params: &SynthParams) -> Result<SyntheticCity> {
    if params.n_regions == 0 || params.n_regions > params.voronoi_seeds {
        return Err(Error::invalid(format!(
            "n_regions must be in [1, voronoi_seeds = {}], got {}",
            params.voronoi_seeds, params.n_regions
        )));
    }
    if params.n_districts == 0 || params.n_districts > DISTRICT_NAMES.len() {
        return Err(Error::invalid(format!(
            "n_districts must be in [1, {}]",
            DISTRICT_NAMES.len()
        )));
    }
    if !(params.extent_m > 0.0 && params.edge_length > 0.0 && params.road_spacing_m > 0.0) {
        return Err(Error::invalid("extent, edge length and road spacing must be positive"));
    }
    let mut rng = substream(seed, streams::SYNTH);
    let ext = params.extent_m;
    let bbox = Rect::new(0.0, 0.0, ext, ext);
    let grid = HexGrid::build(bbox, params.edge_length, params.shape)?;
    let m = grid.len();

    let districts: Vec<District> = (0..params.n_districts)
        .map(|k| {
            let center = Point::new(rng.random_range(0.1..0.9) * ext, rng.random_range(0.1..0.9) * ext);
            let poi_boost = [k % NUM_POI, (3 * k + 7) % NUM_POI];
            let lu_boost = [(5 * k + 2) % NUM_LANDUSE, (7 * k + 9) % NUM_LANDUSE];
            District {
                center,
                poi_profile: dirichlet(&mut rng, 0.4, &poi_boost),
                landuse_profile: dirichlet(&mut rng, 0.3, &lu_boost),
            }
        })
        .collect();
    let bandwidth = ext / (1.5 * (params.n_districts as f64).sqrt());
    let downtown = districts[0].center;

    // POIs: Poisson counts per cell and category, uniform positions in the cell.
    let jitter = Normal::new(0.0, 0.35).expect("valid normal");
    let mut pois = Vec::new();
    for cell in &grid.cells {
        let w = district_weights(&districts, cell.center, bandwidth);
        let r = cell.center.dist(downtown) / ext;
        let density = (0.25 + 1.75 * (-r * r / 0.18).exp()) * f64::exp(jitter.sample(&mut rng));
        for c in 0..NUM_POI {
            let mix: f64 = districts.iter().zip(&w).map(|(d, wk)| wk * d.poi_profile[c]).sum();
            let lambda = params.poi_per_cell * density * mix;
            let n = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..n {
                pois.push(PoiRecord {
                    location: random_point_in(&cell.polygon, &mut rng),
                    category: c,
                });
            }
        }
    }

    // Land-use zones: rectangles typed by the local district mixture.
    let mut landuse = Vec::with_capacity(params.landuse_zones);
    for _ in 0..params.landuse_zones {
        let c = Point::new(rng.random_range(0.0..ext), rng.random_range(0.0..ext));
        let w = district_weights(&districts, c, bandwidth);
        let probs: Vec<f64> = (0..NUM_LANDUSE)
            .map(|k| districts.iter().zip(&w).map(|(d, wk)| wk * d.landuse_profile[k]).sum())
            .collect();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut kind = NUM_LANDUSE - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                kind = k;
                break;
            }
        }
        let hw = rng.random_range(80.0..320.0);
        let hh = rng.random_range(80.0..320.0);
        let rect = Rect::new(
            (c.x - hw).max(0.0),
            (c.y - hh).max(0.0),
            (c.x + hw).min(ext),
            (c.y + hh).min(ext),
        );
        landuse.push(LandUseZone {
            polygon: Polygon::new(rect.ring()),
            kind,
        });
    }

    // Roads: a jittered lattice of through streets.
    let mut roads = Vec::new();
    let n_lines = (ext / params.road_spacing_m).floor() as usize;
    for k in 1..=n_lines {
        let base = k as f64 * params.road_spacing_m;
        let mut h = Vec::new();
        let mut v = Vec::new();
        for s in 0..=8 {
            let t = ext * s as f64 / 8.0;
            h.push(Point::new(t, (base + rng.random_range(-40.0..40.0)).clamp(0.0, ext)));
            v.push(Point::new((base + rng.random_range(-40.0..40.0)).clamp(0.0, ext), t));
        }
        roads.push(h);
        roads.push(v);
    }

    let addresses = grid
        .cells
        .iter()
        .map(|cell| {
            let w = district_weights(&districts, cell.center, bandwidth);
            let d = w
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(k, _)| k);
            let street = (cell.center.y / params.road_spacing_m).round().max(0.0) as usize + 1;
            let number = (cell.center.x.max(0.0) / 10.0).round() as usize + 1;
            format!("{number} Street {street}, {}", DISTRICT_NAMES[d])
        })
        .collect();

    // Regions.
    let seeds: Vec<Point> = (0..params.voronoi_seeds)
        .map(|_| Point::new(rng.random_range(0.0..ext), rng.random_range(0.0..ext)))
        .collect();
    let mut regions = voronoi_regions(&seeds, bbox);
    regions.retain(|r| r.area() > 0.0);
    if regions.len() < params.n_regions {
        return Err(Error::invalid("too few non-empty Voronoi regions"));
    }
    if regions.len() > params.n_regions {
        let (merged, _) = merge_regions_with_members(&regions, params.n_regions, seed)?;
        regions = merged;
    }
    for (k, r) in regions.iter_mut().enumerate() {
        r.id = k as u64;
    }

    // Targets.
    let poi_counts = bin_pois(&pois, &grid).counts;
    let lu_counts = bin_landuse(&landuse, &grid).counts;
    let overlap = build_overlap_map(&regions, &grid);
    let density = neighbourhood_density(&grid, &poi_counts);
    let mut tasks = Vec::new();
    let mut coefficients = Vec::new();
    let mut cell_signal = Vec::new();
    let mut region_noise = Vec::new();
    for spec in &params.tasks {
        let poi_w: Vec<f64> = (0..NUM_POI).map(|_| rng.random_range(0.0..2.0)).collect();
        let lu_w: Vec<f64> = (0..NUM_LANDUSE).map(|_| rng.random_range(-1.0..3.0)).collect();
        let linear: Vec<f64> = (0..m)
            .map(|i| {
                let p: f64 = poi_w.iter().enumerate().map(|(c, w)| w * poi_counts[[i, c]]).sum();
                let l: f64 = lu_w.iter().enumerate().map(|(k, w)| w * lu_counts[[i, k]]).sum();
                p + l
            })
            .collect();
        // Scale the density term relative to the linear field's spread.
        let scale = variance(&linear).sqrt() / variance(&density).sqrt().max(1e-12);
        let gamma = spec.nonlinear * scale;
        let field: Vec<f64> = linear.iter().zip(&density).map(|(a, b)| a + gamma * b).collect();
        let clean = region_sums(&field, &regions, &overlap);
        let sigma = match spec.noise {
            Noise::Sigma(s) if s >= 0.0 => s,
            Noise::Ceiling(r2) if r2 > 0.0 && r2 <= 1.0 => (variance(&clean) * (1.0 / r2 - 1.0)).sqrt(),
            other => return Err(Error::invalid(format!("bad noise spec {other:?}"))),
        };
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let noise: Vec<f64> = clean.iter().map(|_| sigma * normal.sample(&mut rng)).collect();
        tasks.push(TaskDataset {
            task_name: spec.name.clone(),
            region_ids: regions.iter().map(|r| r.id).collect(),
            targets: clean.iter().zip(&noise).map(|(a, b)| a + b).collect(),
        });
        coefficients.push(TaskCoefficients {
            name: spec.name.clone(),
            poi: poi_w,
            landuse: lu_w,
            nonlinear: gamma,
            sigma,
        });
        cell_signal.push(field);
        region_noise.push(noise);
    }

    Ok(SyntheticCity {
        seed,
        params: params.clone(),
        bbox,
        regions,
        pois,
        landuse,
        roads,
        addresses,
        tasks,
        coefficients,
        cell_signal,
        region_noise,
    })
}

/// Square root of the POI count summed over a cell and its neighbours.
fn neighbourhood_density(grid: &HexGrid, poi: &Mat) -> Vec<f64> {
    let totals: Vec<f64> = poi.rows().into_iter().map(|r| r.sum()).collect();
    (0..grid.len())
        .map(|i| {
            let s: f64 = totals[i] + grid.adjacency[i].iter().map(|&j| totals[j]).sum::<f64>();
            s.sqrt()
        })
        .collect()
}

impl SyntheticCity {
    pub fn grid(&self) -> Result<HexGrid> {
        HexGrid::build(self.bbox, self.params.edge_length, self.params.shape)
    }

    /// Raw inputs without image manifests, so image refs are synthesized.
    pub fn raw_inputs(&self) -> RawInputs {
        RawInputs {
            pois: self.pois.clone(),
            landuse: self.landuse.clone(),
            roads: self.roads.clone(),
            addresses: Some(self.addresses.clone()),
            satellite_manifest: None,
            streetview_manifest: None,
        }
    }

    /// Merge regions and derive the merged tasks' targets by summing member
    /// targets, which equals re-aggregating the cell field with member noise.
    pub fn merged(&self, target_count: usize, seed: u64) -> Result<(Vec<Region>, Vec<TaskDataset>)> {
        let (regions, members) = merge_regions_with_members(&self.regions, target_count, seed)?;
        let tasks = merge_task_targets(&self.tasks, &regions, &members)?;
        Ok((regions, tasks))
    }
}

/// Targets for merged regions as sums over each region's members.
pub fn merge_task_targets(tasks: &[TaskDataset], regions: &[Region], members: &[Vec<u64>]) -> Result<Vec<TaskDataset>> {
    tasks
        .iter()
        .map(|t| {
            let targets = members
                .iter()
                .map(|ids| {
                    ids.iter()
                        .map(|id| {
                            t.region_ids
                                .iter()
                                .position(|r| r == id)
                                .map(|k| t.targets[k])
                                .ok_or_else(|| Error::invalid(format!("task {} has no target for region {id}", t.task_name)))
                        })
                        .sum::<Result<f64>>()
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(TaskDataset {
                task_name: t.task_name.clone(),
                region_ids: regions.iter().map(|r| r.id).collect(),
                targets,
            })
        })
        .collect()
}
