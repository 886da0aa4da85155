//! On-disk datasets and model archives, plus the train/test split.
//!
//! Every binary blob is `u64 LE payload length | payload | u32 LE CRC-32 of
//! payload`. Simulation payloads hold, per frame `0..=T`, the node
//! coordinates (channel-major), the node displacements (channel-major), the
//! element effective stresses and the element effective strains, all as
//! f64 LE. Frame times are `t * record_dt` and are not stored.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Frame, MaterialLEM, SimulationRecord};
use crate::mesh::{grid_topology, Face, LoadSpec, MeshTopology, NormalizationStats};
use crate::metrics::MetricsReport;
use crate::nelo::TrainConfig;
use crate::predict::{NepConfig, NepModel};
use crate::surrogate::Surrogate;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_JSON: &str = "model.json";
pub const MODEL_BIN: &str = "model.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimEntry {
    pub file: String,
    pub load: LoadSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub node_dims: Vec<usize>,
    pub spacing: f64,
    /// Indices of constrained nodes.
    pub constrained: Vec<usize>,
    pub material: MaterialLEM,
    pub steps: usize,
    pub record_dt: f64,
    pub sims: Vec<SimEntry>,
}

impl DatasetManifest {
    /// Exact size of each `sim_%04d.bin`.
    pub fn sim_file_len(&self) -> u64 {
        let n: usize = self.node_dims.iter().product();
        let e: usize = self.node_dims.iter().map(|d| d - 1).product();
        let per_frame = 2 * self.node_dims.len() * n + 2 * e;
        blob_len((self.steps + 1) * per_frame)
    }

    pub fn topology(&self) -> Result<MeshTopology> {
        let topo = grid_topology(&self.node_dims, self.spacing, Face::Bottom)?;
        let mut mask = vec![false; topo.n_nodes()];
        for &i in &self.constrained {
            *mask.get_mut(i).ok_or_else(|| {
                Error::InvalidTopology(format!("constrained node {i} out of range"))
            })? = true;
        }
        topo.with_constrained(mask)
    }
}

pub fn sim_file_name(i: usize) -> String {
    format!("sim_{i:04}.bin")
}

fn blob_len(values: usize) -> u64 {
    8 + 8 * values as u64 + 4
}

fn encode_blob(values: &[f64]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(8 * values.len());
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn decode_blob(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    let corrupt = |reason: String| Error::CorruptDataset {
        file: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 {
        return Err(corrupt(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    if len % 8 != 0 || len != bytes.len() as u64 - 12 {
        return Err(corrupt(format!(
            "header says {len} payload bytes, file holds {}",
            bytes.len() as i64 - 12
        )));
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(corrupt(format!(
            "CRC-32 {actual:08x} does not match stored {stored:08x}"
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `records` under `dir` (created if missing). All records must share
/// one regular-grid topology, material, step count and record interval.
pub fn write_dataset(
    records: &[SimulationRecord],
    dir: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("cannot write an empty dataset".into()))?;
    let topo = &first.topology;
    let grid = grid_topology(topo.node_dims(), topo.spacing(), Face::Bottom)?;
    if grid.rest_coordinates() != topo.rest_coordinates() {
        return Err(Error::InvalidTopology(
            "only regular grids can be stored".into(),
        ));
    }
    for (i, r) in records.iter().enumerate() {
        if r.topology != *topo
            || r.material != first.material
            || r.steps() != first.steps()
            || r.record_dt != first.record_dt
        {
            return Err(Error::Config(format!(
                "simulation {i} differs from simulation 0 in mesh, material or timing"
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        node_dims: topo.node_dims().to_vec(),
        spacing: topo.spacing(),
        constrained: (0..topo.n_nodes())
            .filter(|&i| topo.is_constrained(i))
            .collect(),
        material: first.material,
        steps: first.steps(),
        record_dt: first.record_dt,
        sims: records
            .iter()
            .enumerate()
            .map(|(i, r)| SimEntry {
                file: sim_file_name(i),
                load: r.load,
                seed,
            })
            .collect(),
    };
    for (r, entry) in records.iter().zip(&manifest.sims) {
        let mut values = Vec::new();
        for f in &r.frames {
            values.extend_from_slice(&f.coords);
            values.extend_from_slice(&f.displacements);
            values.extend_from_slice(&f.stress);
            values.extend_from_slice(&f.strain);
        }
        write_file(&dir.join(&entry.file), &encode_blob(&values))?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::CorruptDataset {
            file: dir.join(MANIFEST_FILE),
            reason: format!("unsupported schema version {}", m.schema_version),
        });
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SimulationRecord>)> {
    let manifest = read_manifest(dir)?;
    let topo = manifest.topology()?;
    let (n, e, dim) = (topo.n_nodes(), topo.n_elements(), topo.dim());
    let expected = manifest.sim_file_len();
    let mut records = Vec::with_capacity(manifest.sims.len());
    for entry in &manifest.sims {
        let path = dir.join(&entry.file);
        let bytes = read_file(&path)?;
        if bytes.len() as u64 != expected {
            return Err(Error::CorruptDataset {
                file: path,
                reason: format!("{} bytes, expected {expected}", bytes.len()),
            });
        }
        let values = decode_blob(&bytes, &path)?;
        let mut rest = values.as_slice();
        let mut take = |k: usize| {
            let (a, b) = rest.split_at(k);
            rest = b;
            a.to_vec()
        };
        let frames = (0..=manifest.steps)
            .map(|t| Frame {
                time: t as f64 * manifest.record_dt,
                coords: take(dim * n),
                displacements: take(dim * n),
                stress: take(e),
                strain: take(e),
            })
            .collect();
        records.push(SimulationRecord {
            topology: topo.clone(),
            material: manifest.material,
            load: entry.load,
            record_dt: manifest.record_dt,
            frames,
        });
    }
    Ok((manifest, records))
}

/// Seeded shuffle of `0..n` split into `ceil(ratio * n)` training and the
/// remaining test indices. Both parts are kept non-empty.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Split(format!(
            "need at least 2 simulations, got {n}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio {ratio} must lie in (0, 1)")));
    }
    // tolerance absorbs products like 0.8 * 450 landing a hair above 360
    let n_train = ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = split_indices(items.len(), ratio, seed)?;
    Ok((
        a.iter().map(|&i| items[i].clone()).collect(),
        b.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// `model.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub schema_version: u32,
    pub architecture: NepConfig,
    pub stats: NormalizationStats,
    pub training: Option<TrainConfig>,
    pub metrics: Option<MetricsReport>,
    pub parameter_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelArchive {
    pub surrogate: Surrogate,
    pub training: Option<TrainConfig>,
    pub metrics: Option<MetricsReport>,
}

impl ModelArchive {
    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            schema_version: SCHEMA_VERSION,
            architecture: self.surrogate.model.config.clone(),
            stats: self.surrogate.stats.clone(),
            training: self.training.clone(),
            metrics: self.metrics.clone(),
            parameter_count: self.surrogate.model.num_parameters(),
        }
    }
}

/// Parameters are stored in [`NepModel::tensors`] order.
pub fn write_model(archive: &ModelArchive, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let values: Vec<f64> = archive
        .surrogate
        .model
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    write_file(&dir.join(MODEL_BIN), &encode_blob(&values))?;
    write_json(&dir.join(MODEL_JSON), &archive.manifest())
}

pub fn read_model(dir: &Path) -> Result<ModelArchive> {
    let json = dir.join(MODEL_JSON);
    let m: ModelManifest = read_json(&json)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::CorruptDataset {
            file: json,
            reason: format!("unsupported schema version {}", m.schema_version),
        });
    }
    let mut model = NepModel::init(m.architecture, 0)?;
    let count = model.num_parameters();
    let bin = dir.join(MODEL_BIN);
    let bytes = read_file(&bin)?;
    if count != m.parameter_count || bytes.len() as u64 != blob_len(count) {
        return Err(Error::CorruptDataset {
            file: bin,
            reason: format!(
                "{} bytes, architecture needs {count} parameters ({} bytes)",
                bytes.len(),
                blob_len(count)
            ),
        });
    }
    let values = decode_blob(&bytes, &bin)?;
    let mut offset = 0;
    let tensors = model
        .tensors()
        .iter()
        .map(|t| {
            let len = t.len();
            offset += len;
            Tensor::new(t.shape().to_vec(), values[offset - len..offset].to_vec())
                .map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    model.set_tensors(tensors)?;
    Ok(ModelArchive {
        surrogate: Surrogate::new(model, m.stats)?,
        training: m.training,
        metrics: m.metrics,
    })
}
