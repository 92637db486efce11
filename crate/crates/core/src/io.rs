//! On-disk artifacts: the `FEMB` embedding format, run manifests and the
//! city data directory layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::geometry::{LocalProjection, Rect, Region};
use crate::ingest::loaders::{
    landuse_geojson, load_addresses, load_landuse, load_manifest, load_pois, load_regions, load_roads, load_task,
    regions_geojson, roads_geojson, write_addresses, write_pois, write_task,
};
use crate::ingest::synth::SyntheticCity;
use crate::ingest::{RawInputs, TaskDataset};

pub const MAGIC: &[u8; 4] = b"FEMB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Sidecar path holding the row ids: `cells.femb` → `cells.ids.json`.
pub fn ids_path(path: &Path) -> PathBuf {
    path.with_extension("ids.json")
}

/// Encode a matrix as `FEMB` bytes. Values are stored as `f32`.
pub fn encode_embedding(m: &Mat) -> Result<Vec<u8>> {
    let (rows, cols) = m.dim();
    let dims = [rows, cols].map(u32::try_from);
    let [Ok(r), Ok(c)] = dims else {
        return Err(Error::invalid(format!("{rows}×{cols} matrix too large for the embedding format")));
    };
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&narrow(*v).to_le_bytes());
    }
    Ok(out)
}

const F32_TO_F64_NAN_SHIFT: u32 = 52 - 23;

/// `f32 → f64` keeping NaN sign and payload bits, which `as` may quiet.
fn widen(x: f32) -> f64 {
    if x.is_nan() {
        let b = x.to_bits();
        let sign = u64::from(b >> 31) << 63;
        let payload = u64::from(b & 0x007f_ffff) << F32_TO_F64_NAN_SHIFT;
        f64::from_bits(sign | 0x7ff0_0000_0000_0000 | payload)
    } else {
        x as f64
    }
}

/// Inverse of [`widen`] for NaNs; other values round to nearest.
fn narrow(x: f64) -> f32 {
    if x.is_nan() {
        let b = x.to_bits();
        let sign = ((b >> 63) as u32) << 31;
        let mut payload = ((b & 0x000f_ffff_ffff_ffff) >> F32_TO_F64_NAN_SHIFT) as u32;
        if payload == 0 {
            payload = 0x0040_0000;
        }
        f32::from_bits(sign | 0x7f80_0000 | payload)
    } else {
        x as f32
    }
}

/// Decode `FEMB` bytes. The whole buffer is validated before any value is
/// produced.
pub fn decode_embedding(bytes: &[u8]) -> Result<Mat> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("embedding file has {} bytes, shorter than its header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported embedding file version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("{rows}×{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload of a {rows}×{cols} matrix needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| widen(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    Ok(Mat::from_shape_vec((rows, cols), values).expect("validated length"))
}

pub fn write_embedding_file(path: &Path, m: &Mat, ids: &[u64]) -> Result<()> {
    if ids.len() != m.nrows() {
        return Err(Error::invalid(format!("{} ids for {} rows", ids.len(), m.nrows())));
    }
    fs::write(path, encode_embedding(m)?)?;
    fs::write(ids_path(path), serde_json::to_vec(ids)?)?;
    Ok(())
}

pub fn read_embedding_file(path: &Path) -> Result<(Mat, Vec<u64>)> {
    let m = decode_embedding(&fs::read(path)?)?;
    let ids_file = ids_path(path);
    let ids: Vec<u64> = serde_json::from_slice(&fs::read(&ids_file)?)
        .map_err(|e| Error::Format(format!("{}: {e}", ids_file.display())))?;
    if ids.len() != m.nrows() {
        return Err(Error::Format(format!(
            "{} lists {} ids for {} rows",
            ids_file.display(),
            ids.len(),
            m.nrows()
        )));
    }
    Ok((m, ids))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Machine-readable record of one command invocation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// Path → SHA-256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// Path → SHA-256 of every file written.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_hash: &str) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            ..Self::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }
}

/// File names inside a city data directory.
#[derive(Clone, Debug)]
pub struct DataDir(pub PathBuf);

impl DataDir {
    pub fn regions(&self) -> PathBuf {
        self.0.join("regions.geojson")
    }
    pub fn pois(&self) -> PathBuf {
        self.0.join("pois.csv")
    }
    pub fn landuse(&self) -> PathBuf {
        self.0.join("landuse.geojson")
    }
    pub fn roads(&self) -> PathBuf {
        self.0.join("roads.geojson")
    }
    pub fn addresses(&self) -> PathBuf {
        self.0.join("addresses.csv")
    }
    pub fn satellite_manifest(&self) -> PathBuf {
        self.0.join("satellite_manifest.json")
    }
    pub fn streetview_manifest(&self) -> PathBuf {
        self.0.join("streetview_manifest.json")
    }
    pub fn tasks(&self) -> PathBuf {
        self.0.join("tasks")
    }
    pub fn task(&self, name: &str) -> PathBuf {
        self.tasks().join(format!("{name}.csv"))
    }
}

/// A city as read from a data directory, in planar coordinates.
#[derive(Clone, Debug)]
pub struct CityData {
    pub regions: Vec<Region>,
    pub raw: RawInputs,
    pub tasks: Vec<TaskDataset>,
    /// Files that were read.
    pub files: Vec<PathBuf>,
}

impl CityData {
    /// Study area: the bounding box of all regions.
    pub fn extent(&self) -> Result<Rect> {
        let mut it = self.regions.iter().filter_map(|r| r.shape.bbox());
        let first = it.next().ok_or_else(|| Error::invalid("no regions with geometry"))?;
        Ok(it.fold(first, |a, b| a.union(&b)))
    }
}

/// Write a synthetic city in the on-disk input formats. Returns the files
/// written.
pub fn write_city(city: &SyntheticCity, dir: &Path, proj: &LocalProjection) -> Result<Vec<PathBuf>> {
    let d = DataDir(dir.to_path_buf());
    fs::create_dir_all(d.tasks())?;
    let mut files = Vec::new();
    let mut json = |path: PathBuf, v: serde_json::Value| -> Result<()> {
        let mut bytes = serde_json::to_vec(&v)?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    json(d.regions(), regions_geojson(&city.regions, proj))?;
    json(d.landuse(), landuse_geojson(&city.landuse, proj))?;
    json(d.roads(), roads_geojson(&city.roads, proj))?;
    write_pois(&d.pois(), &city.pois, proj)?;
    write_addresses(&d.addresses(), &city.addresses)?;
    files.extend([d.pois(), d.addresses()]);
    for t in &city.tasks {
        write_task(&d.task(&t.task_name), t)?;
        files.push(d.task(&t.task_name));
    }
    Ok(files)
}

/// Read a city data directory. Addresses, manifests and tasks are optional;
/// `cells` sizes the address table.
pub fn load_city(dir: &Path, proj: &LocalProjection) -> Result<CityData> {
    let d = DataDir(dir.to_path_buf());
    let mut files = vec![d.regions(), d.pois(), d.landuse(), d.roads()];
    let regions = load_regions(&d.regions(), proj)?;
    let (pois, rejected) = load_pois(&d.pois(), proj)?;
    if !rejected.is_empty() {
        log::warn!("{} POIs with unknown categories were skipped", rejected.len());
    }
    let (landuse, unknown) = load_landuse(&d.landuse(), proj)?;
    if !unknown.is_empty() {
        log::warn!("{} land-use zones with unknown types were skipped", unknown.len());
    }
    let roads = load_roads(&d.roads(), proj)?;
    let optional = |p: PathBuf, files: &mut Vec<PathBuf>| {
        p.exists().then(|| {
            files.push(p.clone());
            p
        })
    };
    let satellite_manifest = optional(d.satellite_manifest(), &mut files)
        .map(|p| load_manifest(&p, proj))
        .transpose()?;
    let streetview_manifest = optional(d.streetview_manifest(), &mut files)
        .map(|p| load_manifest(&p, proj))
        .transpose()?;
    let addresses = optional(d.addresses(), &mut files);
    let mut tasks = Vec::new();
    if d.tasks().is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(d.tasks())?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "csv"));
        paths.sort();
        for p in paths {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            tasks.push(load_task(&p, &name)?);
            files.push(p);
        }
    }
    let mut city = CityData {
        regions,
        raw: RawInputs {
            pois,
            landuse,
            roads,
            addresses: None,
            satellite_manifest,
            streetview_manifest,
        },
        tasks,
        files,
    };
    if let Some(p) = addresses {
        city.raw.addresses = Some(load_address_list(&p)?);
    }
    Ok(city)
}

/// All addresses in a `cell_id,address` file, indexed by cell id.
fn load_address_list(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut max = None;
    for rec in rdr.records() {
        if let Some(id) = rec?.get(0).and_then(|s| s.trim().parse::<usize>().ok()) {
            max = max.max(Some(id));
        }
    }
    match max {
        Some(m) => load_addresses(path, m + 1),
        None => Ok(Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nan_payloads_survive() {
        for bits in [0x7f80_0001u32, 0xff80_0001, 0x7fc0_0000, 0x7fbf_ffff, 0xffff_ffff] {
            let m = Mat::from_elem((1, 1), widen(f32::from_bits(bits)));
            let bytes = encode_embedding(&m).unwrap();
            assert_eq!(bytes[16..20], bits.to_le_bytes());
            assert_eq!(encode_embedding(&decode_embedding(&bytes).unwrap()).unwrap(), bytes);
        }
        assert!(narrow(f64::NAN).is_nan());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_embedding(&array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(&bytes[..4], b"FEMB");
        assert_eq!(bytes[4..8], [1, 0, 0, 0]);
        assert_eq!(bytes[8..12], [2, 0, 0, 0]);
        assert_eq!(bytes[12..16], [3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 2 * 3 * 4);
        assert_eq!(bytes[16..20], 1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_headers() {
        let good = encode_embedding(&array![[1.5, -2.0]]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_embedding(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode_embedding(&bad).is_err());
        assert!(decode_embedding(&good[..good.len() - 1]).is_err());
        assert!(decode_embedding(&good[..10]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_embedding(&long).is_err());
    }

    #[test]
    fn file_round_trip_with_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.femb");
        let m = array![[0.25, -1.0], [3.0, 1e-3]];
        write_embedding_file(&path, &m, &[7, 9]).unwrap();
        assert!(dir.path().join("e.ids.json").exists());
        let (back, ids) = read_embedding_file(&path).unwrap();
        assert_eq!(ids, vec![7, 9]);
        assert_eq!(back.mapv(|v| v as f32), m.mapv(|v| v as f32));
        assert!(write_embedding_file(&path, &m, &[1]).is_err());
    }
}
