//! Readers and writers for the on-disk input formats.
//!
//! Geometry files are GeoJSON in lon/lat and are projected into the planar
//! frame with a [`LocalProjection`]. POIs and task targets are CSV.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::binning::{LandUseZone, PoiRecord};
use super::vocab::{landuse_type, poi_category, LANDUSE_TYPES, NUM_POI, POI_CATEGORIES};
use super::{ManifestEntry, TaskDataset};
use crate::error::{Error, Result};
use crate::geometry::{LocalProjection, MultiPolygon, Point, Polygon, Region};

fn fmt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| fmt_err(path, e))
}

fn features(v: &Value) -> std::result::Result<&Vec<Value>, String> {
    match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| "FeatureCollection without features".to_string()),
        _ => Err("expected a GeoJSON FeatureCollection".into()),
    }
}

fn position(v: &Value, proj: &LocalProjection) -> std::result::Result<Point, String> {
    let arr = v.as_array().ok_or("position must be an array")?;
    match (arr.first().and_then(Value::as_f64), arr.get(1).and_then(Value::as_f64)) {
        (Some(lon), Some(lat)) if lon.is_finite() && lat.is_finite() => Ok(proj.forward(lon, lat)),
        _ => Err("position needs finite lon and lat".into()),
    }
}

fn ring(v: &Value, proj: &LocalProjection) -> std::result::Result<Vec<Point>, String> {
    let pts = v
        .as_array()
        .ok_or("ring must be an array")?
        .iter()
        .map(|p| position(p, proj))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(pts)
}

fn polygon(v: &Value, proj: &LocalProjection) -> std::result::Result<Polygon, String> {
    let rings = v.as_array().ok_or("polygon must be an array of rings")?;
    let mut it = rings.iter();
    let exterior = ring(it.next().ok_or("polygon without rings")?, proj)?;
    let holes = it.map(|r| ring(r, proj)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Polygon::with_holes(exterior, holes))
}

fn geometry_polygons(g: &Value, proj: &LocalProjection) -> std::result::Result<MultiPolygon, String> {
    let coords = g.get("coordinates").ok_or("geometry without coordinates")?;
    match g.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(MultiPolygon::single(polygon(coords, proj)?)),
        Some("MultiPolygon") => Ok(MultiPolygon(
            coords
                .as_array()
                .ok_or("bad MultiPolygon")?
                .iter()
                .map(|p| polygon(p, proj))
                .collect::<std::result::Result<_, _>>()?,
        )),
        other => Err(format!("unsupported geometry type {other:?}")),
    }
}

fn feature_id(f: &Value, index: usize) -> std::result::Result<u64, String> {
    let raw = f
        .get("id")
        .or_else(|| f.get("properties").and_then(|p| p.get("id")))
        .or_else(|| f.get("properties").and_then(|p| p.get("region_id")));
    match raw {
        None => Ok(index as u64),
        Some(Value::Number(n)) => n.as_u64().ok_or_else(|| format!("id {n} is not a non-negative integer")),
        Some(Value::String(s)) => s.parse().map_err(|_| format!("id {s:?} is not an integer")),
        Some(other) => Err(format!("unsupported id {other}")),
    }
}

/// Regions from a GeoJSON FeatureCollection of (Multi)Polygons. Ids come from
/// the feature `id`, or the `id`/`region_id` property, or the feature index.
pub fn load_regions(path: &Path, proj: &LocalProjection) -> Result<Vec<Region>> {
    let v = read_json(path)?;
    let feats = features(&v).map_err(|e| fmt_err(path, e))?;
    let mut out = Vec::with_capacity(feats.len());
    let mut seen = std::collections::BTreeSet::new();
    for (i, f) in feats.iter().enumerate() {
        let g = f.get("geometry").ok_or_else(|| fmt_err(path, format!("feature {i} has no geometry")))?;
        let shape = geometry_polygons(g, proj).map_err(|e| fmt_err(path, format!("feature {i}: {e}")))?;
        let id = feature_id(f, i).map_err(|e| fmt_err(path, format!("feature {i}: {e}")))?;
        if !seen.insert(id) {
            return Err(fmt_err(path, format!("duplicate region id {id}")));
        }
        out.push(Region { id, shape });
    }
    Ok(out)
}

/// Land-use zones from GeoJSON polygons with a `type` property. Unknown types
/// and unreadable geometries are returned as rejections.
pub fn load_landuse(path: &Path, proj: &LocalProjection) -> Result<(Vec<LandUseZone>, Vec<String>)> {
    let v = read_json(path)?;
    let feats = features(&v).map_err(|e| fmt_err(path, e))?;
    let mut zones = Vec::new();
    let mut rejected = Vec::new();
    for (i, f) in feats.iter().enumerate() {
        let label = f
            .get("properties")
            .and_then(|p| p.get("type"))
            .and_then(Value::as_str)
            .unwrap_or("");
        let Some(kind) = landuse_type(label) else {
            rejected.push(format!("feature {i}: unknown land-use type {label:?}"));
            continue;
        };
        match f.get("geometry").ok_or("no geometry".to_string()).and_then(|g| geometry_polygons(g, proj)) {
            Ok(mp) => zones.extend(mp.0.into_iter().map(|polygon| LandUseZone { polygon, kind })),
            Err(e) => rejected.push(format!("feature {i}: {e}")),
        }
    }
    Ok((zones, rejected))
}

/// Road polylines from GeoJSON LineString / MultiLineString features.
pub fn load_roads(path: &Path, proj: &LocalProjection) -> Result<Vec<Vec<Point>>> {
    let v = read_json(path)?;
    let feats = features(&v).map_err(|e| fmt_err(path, e))?;
    let mut roads = Vec::new();
    for (i, f) in feats.iter().enumerate() {
        let g = f.get("geometry").ok_or_else(|| fmt_err(path, format!("feature {i} has no geometry")))?;
        let coords = g.get("coordinates").unwrap_or(&Value::Null);
        let parsed = match g.get("type").and_then(Value::as_str) {
            Some("LineString") => ring(coords, proj).map(|l| vec![l]),
            Some("MultiLineString") => coords
                .as_array()
                .ok_or("bad MultiLineString".to_string())
                .and_then(|ls| ls.iter().map(|l| ring(l, proj)).collect()),
            other => Err(format!("unsupported geometry type {other:?}")),
        };
        roads.extend(parsed.map_err(|e| fmt_err(path, format!("feature {i}: {e}")))?);
    }
    Ok(roads)
}

/// POIs from CSV with columns `lon,lat,category`; the category is either an
/// index or a label. Rows with bad coordinates are rejected with a reason.
pub fn load_pois(path: &Path, proj: &LocalProjection) -> Result<(Vec<PoiRecord>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| fmt_err(path, format!("missing column {name:?}")))
    };
    let (ilon, ilat, icat) = (col("lon")?, col("lat")?, col("category")?);
    let mut pois = Vec::new();
    let mut rejected = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| rec.get(k).and_then(|s| s.trim().parse::<f64>().ok()).filter(|x| x.is_finite());
        let (Some(lon), Some(lat)) = (num(ilon), num(ilat)) else {
            rejected.push(format!("row {i}: bad coordinates"));
            continue;
        };
        let raw = rec.get(icat).unwrap_or("").trim();
        let category = match raw.parse::<usize>() {
            Ok(k) if k < NUM_POI => k,
            Ok(k) => {
                rejected.push(format!("row {i}: category {k} out of range"));
                continue;
            }
            Err(_) => poi_category(raw),
        };
        pois.push(PoiRecord {
            location: proj.forward(lon, lat),
            category,
        });
    }
    Ok((pois, rejected))
}

/// Task targets from CSV with columns `region_id,value`.
pub fn load_task(path: &Path, task_name: &str) -> Result<TaskDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut region_ids = Vec::new();
    let mut targets = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec
            .get(0)
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| fmt_err(path, format!("row {i}: bad region_id")))?;
        let y = rec
            .get(1)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| fmt_err(path, format!("row {i}: bad value")))?;
        region_ids.push(id);
        targets.push(y);
    }
    let t = TaskDataset {
        task_name: task_name.to_string(),
        region_ids,
        targets,
    };
    t.validate()?;
    Ok(t)
}

/// Per-cell addresses from CSV with columns `cell_id,address`.
pub fn load_addresses(path: &Path, m: usize) -> Result<Vec<String>> {
    let mut out = vec!["address unavailable".to_string(); m];
    let mut rdr = csv::Reader::from_path(path)?;
    for rec in rdr.records() {
        let rec = rec?;
        if let (Some(id), Some(addr)) = (rec.get(0).and_then(|s| s.trim().parse::<usize>().ok()), rec.get(1)) {
            if id < m {
                out[id] = addr.trim().to_string();
            }
        }
    }
    Ok(out)
}

/// Image manifest: a JSON list of `{"cell_id"?, "point"?: [lon, lat],
/// "heading"?, "uri"}`.
pub fn load_manifest(path: &Path, proj: &LocalProjection) -> Result<Vec<ManifestEntry>> {
    let v = read_json(path)?;
    let items = v.as_array().ok_or_else(|| fmt_err(path, "manifest must be a JSON list"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let uri = it
                .get("uri")
                .and_then(Value::as_str)
                .ok_or_else(|| fmt_err(path, format!("entry {i} has no uri")))?;
            let point = match it.get("point") {
                Some(p) => Some(position(p, proj).map_err(|e| fmt_err(path, format!("entry {i}: {e}")))?),
                None => None,
            };
            let cell_id = it.get("cell_id").and_then(Value::as_u64).map(|c| c as usize);
            if cell_id.is_none() && point.is_none() {
                return Err(fmt_err(path, format!("entry {i} needs cell_id or point")));
            }
            Ok(ManifestEntry {
                cell_id,
                point,
                heading: it.get("heading").and_then(Value::as_u64).map(|h| h as u16),
                uri: uri.to_string(),
            })
        })
        .collect()
}

fn ring_json(ring: &[Point], proj: &LocalProjection) -> Value {
    let mut pts: Vec<Value> = ring
        .iter()
        .map(|&p| {
            let (lon, lat) = proj.inverse(p);
            json!([lon, lat])
        })
        .collect();
    if let Some(first) = pts.first().cloned() {
        pts.push(first);
    }
    Value::Array(pts)
}

fn polygon_json(p: &Polygon, proj: &LocalProjection) -> Value {
    Value::Array(p.rings().map(|r| ring_json(r, proj)).collect())
}

pub fn regions_geojson(regions: &[Region], proj: &LocalProjection) -> Value {
    let feats: Vec<Value> = regions
        .iter()
        .map(|r| {
            let geometry = match r.shape.parts() {
                [single] => json!({"type": "Polygon", "coordinates": polygon_json(single, proj)}),
                parts => json!({
                    "type": "MultiPolygon",
                    "coordinates": parts.iter().map(|p| polygon_json(p, proj)).collect::<Vec<_>>(),
                }),
            };
            json!({"type": "Feature", "id": r.id, "properties": {"id": r.id}, "geometry": geometry})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": feats})
}

pub fn landuse_geojson(zones: &[LandUseZone], proj: &LocalProjection) -> Value {
    let feats: Vec<Value> = zones
        .iter()
        .map(|z| {
            json!({
                "type": "Feature",
                "properties": {"type": LANDUSE_TYPES[z.kind]},
                "geometry": {"type": "Polygon", "coordinates": polygon_json(&z.polygon, proj)},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": feats})
}

pub fn roads_geojson(roads: &[Vec<Point>], proj: &LocalProjection) -> Value {
    let feats: Vec<Value> = roads
        .iter()
        .map(|line| {
            let coords: Vec<Value> = line
                .iter()
                .map(|&p| {
                    let (lon, lat) = proj.inverse(p);
                    json!([lon, lat])
                })
                .collect();
            json!({"type": "Feature", "properties": {}, "geometry": {"type": "LineString", "coordinates": coords}})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": feats})
}

pub fn write_pois(path: &Path, pois: &[PoiRecord], proj: &LocalProjection) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lon", "lat", "category"])?;
    for p in pois {
        let (lon, lat) = proj.inverse(p.location);
        w.write_record([
            format!("{lon:.9}"),
            format!("{lat:.9}"),
            POI_CATEGORIES[p.category].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_task(path: &Path, task: &TaskDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["region_id", "value"])?;
    for (id, y) in task.region_ids.iter().zip(&task.targets) {
        w.write_record([id.to_string(), format!("{y:?}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_addresses(path: &Path, addresses: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "address"])?;
    for (i, a) in addresses.iter().enumerate() {
        w.write_record([i.to_string(), a.clone()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    fn proj() -> LocalProjection {
        LocalProjection::new(-73.95, 40.72)
    }

    #[test]
    fn regions_round_trip_through_geojson() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.geojson");
        let regions = vec![
            Region {
                id: 4,
                shape: MultiPolygon::single(Polygon::new(Rect::new(0.0, 0.0, 300.0, 200.0).ring())),
            },
            Region {
                id: 9,
                shape: MultiPolygon(vec![
                    Polygon::new(Rect::new(300.0, 0.0, 400.0, 100.0).ring()),
                    Polygon::new(Rect::new(500.0, 0.0, 600.0, 100.0).ring()),
                ]),
            },
        ];
        fs::write(&path, regions_geojson(&regions, &proj()).to_string()).unwrap();
        let back = load_regions(&path, &proj()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].id, 9);
        assert!((back[0].area() - 60_000.0).abs() < 1e-3);
        assert!((back[1].area() - 20_000.0).abs() < 1e-3);
    }

    #[test]
    fn poi_csv_accepts_labels_and_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fs::write(
            &path,
            "lon,lat,category\n-73.95,40.72,7\n-73.95,40.72,Financial Services\n-73.95,40.72,zoo\n-73.95,x,1\n-73.95,40.72,99\n",
        )
        .unwrap();
        let (pois, rejected) = load_pois(&path, &proj()).unwrap();
        assert_eq!(pois.iter().map(|p| p.category).collect::<Vec<_>>(), vec![7, 13, 14]);
        assert_eq!(rejected.len(), 2);
        assert!(pois[0].location.dist(Point::new(0.0, 0.0)) < 1e-6);
    }

    #[test]
    fn task_csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = TaskDataset {
            task_name: "crime".into(),
            region_ids: vec![3, 1],
            targets: vec![0.1 + 0.2, -7.5],
        };
        write_task(&path, &t).unwrap();
        assert_eq!(load_task(&path, "crime").unwrap(), t);
        fs::write(&path, "region_id,value\n1,NaN\n").unwrap();
        assert!(load_task(&path, "crime").is_err());
    }

    #[test]
    fn landuse_unknown_type_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.geojson");
        let zones = vec![LandUseZone {
            polygon: Polygon::new(Rect::new(0.0, 0.0, 10.0, 10.0).ring()),
            kind: 1,
        }];
        let mut v = landuse_geojson(&zones, &proj());
        let mut bad = v["features"][0].clone();
        bad["properties"]["type"] = json!("lava");
        v["features"].as_array_mut().unwrap().push(bad);
        fs::write(&path, v.to_string()).unwrap();
        let (z, rejected) = load_landuse(&path, &proj()).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z[0].kind, 1);
        assert_eq!(rejected.len(), 1);
    }

    #[test]
    fn manifest_requires_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"[{"cell_id": 2, "heading": 90, "uri": "a.jpg"}, {"point": [-73.95, 40.72], "uri": "b.jpg"}]"#).unwrap();
        let m = load_manifest(&path, &proj()).unwrap();
        assert_eq!(m[0].cell_id, Some(2));
        assert!(m[1].point.is_some());
        fs::write(&path, r#"[{"uri": "c.jpg"}]"#).unwrap();
        assert!(load_manifest(&path, &proj()).is_err());
    }
}
