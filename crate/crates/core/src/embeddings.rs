//! Token-embedding datasets: the JSONL interchange format with its `HEMB`
//! binary sidecar, row-wise ℓ2 normalization and a planted-cluster generator.
//!
//! Payloads are `f32` on disk and `f64` in memory. Every value produced by
//! [`generate_synthetic`] or [`load_dataset`] is exactly representable as
//! `f32`, so a save/load cycle is bit-exact.
//!
//! JSONL layout, one object per line:
//!
//! ```text
//! {"header":{"format":"hgabsa-jsonl","version":1,"num_classes":3,"dim":4}}   (optional)
//! {"id":"s0","tokens":["a","b"],"label":1,"aspect_indices":[0],"embeddings":[[..],[..]]}
//! {"id":"s1","tokens":["c"],"label":0,"aspect_indices":[],"embeddings_ref":"x.hemb","row_offset":3}
//! ```
//!
//! Sidecar layout: `"HEMB"`, `u32` version (1), `u32` n, `u32` d, then
//! `n * d` row-major `f32`, all little-endian. Matrices may be concatenated;
//! `row_offset` is the zero-based index of the matrix in the file.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEMB_MAGIC: &[u8; 4] = b"HEMB";
pub const HEMB_VERSION: u32 = 1;
const JSONL_FORMAT: &str = "hgabsa-jsonl";
const JSONL_VERSION: u32 = 1;

/// One sentence: tokens, their embedding rows and the instance label.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub aspect_indices: Vec<usize>,
    /// `n x d`, one row per token in token order.
    pub embeddings: Array2<f64>,
    /// Ground-truth cluster id per token, present on synthetic data.
    pub planted: Option<Vec<usize>>,
}

impl SentenceInstance {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        label: usize,
        aspect_indices: Vec<usize>,
        embeddings: Array2<f64>,
    ) -> Result<Self> {
        let instance = SentenceInstance {
            id: id.into(),
            tokens,
            label,
            aspect_indices,
            embeddings,
            planted: None,
        };
        instance.check_shape()?;
        Ok(instance)
    }

    pub fn with_planted(mut self, planted: Vec<usize>) -> Result<Self> {
        if planted.len() != self.len() {
            return Err(Error::Dimension(format!(
                "instance {}: {} planted labels for {} tokens",
                self.id,
                planted.len(),
                self.len()
            )));
        }
        self.planted = Some(planted);
        Ok(self)
    }

    /// Token count `n`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Dimension(format!("instance {}: no tokens", self.id)));
        }
        if self.embeddings.nrows() != n {
            return Err(Error::Dimension(format!(
                "instance {}: {} tokens but {} embedding rows",
                self.id,
                n,
                self.embeddings.nrows()
            )));
        }
        if self.embeddings.ncols() == 0 {
            return Err(Error::Dimension(format!("instance {}: zero embedding width", self.id)));
        }
        if let Some(&bad) = self.aspect_indices.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension(format!(
                "instance {}: aspect index {bad} out of range for {n} tokens",
                self.id
            )));
        }
        Ok(())
    }
}

/// A collection of instances sharing one embedding width and label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub instances: Vec<SentenceInstance>,
    pub num_classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn new(instances: Vec<SentenceInstance>, num_classes: usize, dim: usize) -> Result<Self> {
        let dataset = Dataset {
            instances,
            num_classes,
            dim,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Builds a dataset inferring `dim` from the first instance and
    /// `num_classes` as one past the largest label.
    pub fn from_instances(instances: Vec<SentenceInstance>) -> Result<Self> {
        let dim = instances.first().map_or(0, SentenceInstance::dim);
        let num_classes = instances.iter().map(|i| i.label + 1).max().unwrap_or(0);
        Dataset::new(instances, num_classes, dim)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for instance in &self.instances {
            instance.check_shape()?;
            if instance.dim() != self.dim {
                return Err(Error::Dimension(format!(
                    "instance {}: width {} differs from dataset width {}",
                    instance.id,
                    instance.dim(),
                    self.dim
                )));
            }
            if instance.label >= self.num_classes {
                return Err(Error::Dimension(format!(
                    "instance {}: label {} outside [0, {})",
                    instance.id, instance.label, self.num_classes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    num_classes: usize,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    tokens: Vec<String>,
    label: usize,
    aspect_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planted_clusters: Option<Vec<usize>>,
}

/// Reads a JSONL dataset, resolving sidecar references relative to the
/// JSONL file's directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut sidecars: HashMap<PathBuf, Vec<Array2<f64>>> = HashMap::new();
    let mut header: Option<Header> = None;
    let mut instances = Vec::new();

    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_index = instances.len();
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Format {
            record: record_index,
            message: e.to_string(),
        })?;
        if value.get("header").is_some() {
            if header.is_some() || !instances.is_empty() {
                return Err(Error::Format {
                    record: record_index,
                    message: "header must be the first line".into(),
                });
            }
            let parsed: HeaderLine = serde_json::from_value(value).map_err(|e| Error::Format {
                record: record_index,
                message: format!("malformed header: {e}"),
            })?;
            if parsed.header.format != JSONL_FORMAT || parsed.header.version != JSONL_VERSION {
                return Err(Error::Format {
                    record: record_index,
                    message: format!("unsupported header {} v{}", parsed.header.format, parsed.header.version),
                });
            }
            header = Some(parsed.header);
            continue;
        }
        let record: Record = serde_json::from_value(value).map_err(|e| Error::Format {
            record: record_index,
            message: e.to_string(),
        })?;
        let embeddings = record_embeddings(&record, record_index, &base, &mut sidecars)?;
        let mut instance = SentenceInstance {
            id: record.id,
            tokens: record.tokens,
            label: record.label,
            aspect_indices: record.aspect_indices,
            embeddings,
            planted: None,
        };
        instance.check_shape()?;
        if let Some(planted) = record.planted_clusters {
            instance = instance.with_planted(planted)?;
        }
        instances.push(instance);
    }

    match header {
        Some(h) => Dataset::new(instances, h.num_classes, h.dim),
        None => Dataset::from_instances(instances),
    }
}

fn record_embeddings(
    record: &Record,
    record_index: usize,
    base: &Path,
    sidecars: &mut HashMap<PathBuf, Vec<Array2<f64>>>,
) -> Result<Array2<f64>> {
    match (&record.embeddings, &record.embeddings_ref) {
        (Some(rows), None) => rows_to_matrix(rows, record_index),
        (None, Some(reference)) => {
            let offset = record.row_offset.ok_or_else(|| Error::Format {
                record: record_index,
                message: "embeddings_ref without row_offset".into(),
            })?;
            let sidecar_path = base.join(reference);
            if !sidecars.contains_key(&sidecar_path) {
                let bytes = fs::read(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
                let matrices = read_hemb(&bytes).map_err(|e| match e {
                    Error::Format { message, .. } => Error::Format {
                        record: record_index,
                        message: format!("{}: {message}", sidecar_path.display()),
                    },
                    other => other,
                })?;
                sidecars.insert(sidecar_path.clone(), matrices);
            }
            let matrices = &sidecars[&sidecar_path];
            matrices.get(offset).cloned().ok_or_else(|| Error::Format {
                record: record_index,
                message: format!("row_offset {offset} but sidecar holds {} matrices", matrices.len()),
            })
        }
        (Some(_), Some(_)) => Err(Error::Format {
            record: record_index,
            message: "both embeddings and embeddings_ref present".into(),
        }),
        (None, None) => Err(Error::Format {
            record: record_index,
            message: "missing embeddings".into(),
        }),
    }
}

fn rows_to_matrix(rows: &[Vec<f32>], record_index: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::Dimension(format!(
            "record {record_index}: embedding row {bad} has width {} (expected {d})",
            rows[bad].len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().map(|&v| f64::from(v)).collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Dimension(e.to_string()))
}

fn header_line(dataset: &Dataset) -> Result<String> {
    serde_json::to_string(&HeaderLine {
        header: Header {
            format: JSONL_FORMAT.into(),
            version: JSONL_VERSION,
            num_classes: dataset.num_classes,
            dim: dataset.dim,
        },
    })
    .map_err(|e| Error::Format {
        record: 0,
        message: e.to_string(),
    })
}

fn to_record(instance: &SentenceInstance) -> Record {
    Record {
        id: instance.id.clone(),
        tokens: instance.tokens.clone(),
        label: instance.label,
        aspect_indices: instance.aspect_indices.clone(),
        embeddings: None,
        embeddings_ref: None,
        row_offset: None,
        planted_clusters: instance.planted.clone(),
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the dataset as JSONL with inline embeddings.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let mut lines = vec![header_line(dataset)?];
    for (i, instance) in dataset.instances.iter().enumerate() {
        let mut record = to_record(instance);
        record.embeddings = Some(
            instance
                .embeddings
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|&v| v as f32).collect())
                .collect(),
        );
        lines.push(serde_json::to_string(&record).map_err(|e| Error::Format {
            record: i,
            message: e.to_string(),
        })?);
    }
    write_lines(path.as_ref(), lines)
}

/// Writes JSONL records that reference one concatenated `HEMB` sidecar.
/// The sidecar is referenced by file name, so it must live next to the JSONL.
pub fn save_dataset_with_sidecar(dataset: &Dataset, path: impl AsRef<Path>, sidecar_name: &str) -> Result<()> {
    dataset.validate()?;
    let path = path.as_ref();
    let sidecar_path = path.parent().unwrap_or(Path::new("")).join(sidecar_name);
    let matrices: Vec<ArrayView2<f64>> = dataset.instances.iter().map(|i| i.embeddings.view()).collect();
    let bytes = write_hemb(&matrices)?;
    fs::write(&sidecar_path, bytes).map_err(|e| Error::io(&sidecar_path, e))?;

    let mut lines = vec![header_line(dataset)?];
    for (i, instance) in dataset.instances.iter().enumerate() {
        let mut record = to_record(instance);
        record.embeddings_ref = Some(sidecar_name.to_string());
        record.row_offset = Some(i);
        lines.push(serde_json::to_string(&record).map_err(|e| Error::Format {
            record: i,
            message: e.to_string(),
        })?);
    }
    write_lines(path, lines)
}

/// Encodes matrices as concatenated `HEMB` blocks.
pub fn write_hemb(matrices: &[ArrayView2<f64>]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    for m in matrices {
        let (n, d) = m.dim();
        let n32 = u32::try_from(n).map_err(|_| Error::Dimension(format!("n = {n} exceeds u32")))?;
        let d32 = u32::try_from(d).map_err(|_| Error::Dimension(format!("d = {d} exceeds u32")))?;
        bytes.extend_from_slice(HEMB_MAGIC);
        bytes.extend_from_slice(&HEMB_VERSION.to_le_bytes());
        bytes.extend_from_slice(&n32.to_le_bytes());
        bytes.extend_from_slice(&d32.to_le_bytes());
        for &v in m.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(bytes)
}

/// Decodes every `HEMB` block in `bytes`, in order.
pub fn read_hemb(bytes: &[u8]) -> Result<Vec<Array2<f64>>> {
    let mut matrices = Vec::new();
    let mut pos = 0usize;
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        let end = *pos + 4;
        let chunk = bytes.get(*pos..end).ok_or_else(|| Error::Format {
            record: 0,
            message: format!("truncated sidecar at byte {pos}"),
        })?;
        *pos = end;
        Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")))
    };
    while pos < bytes.len() {
        let block = matrices.len();
        if bytes.get(pos..pos + 4) != Some(HEMB_MAGIC.as_slice()) {
            return Err(Error::Format {
                record: 0,
                message: format!("bad magic in sidecar block {block}"),
            });
        }
        pos += 4;
        let version = take_u32(&mut pos)?;
        if version != HEMB_VERSION {
            return Err(Error::Format {
                record: 0,
                message: format!("unsupported sidecar version {version} in block {block}"),
            });
        }
        let n = take_u32(&mut pos)? as usize;
        let d = take_u32(&mut pos)? as usize;
        let payload = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Dimension(format!("block {block}: {n} x {d} overflows")))?;
        let data = bytes.get(pos..pos + payload).ok_or_else(|| {
            Error::Dimension(format!(
                "block {block}: declared {n} x {d} but only {} payload bytes remain",
                bytes.len() - pos
            ))
        })?;
        pos += payload;
        let values: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
            .collect();
        matrices.push(Array2::from_shape_vec((n, d), values).map_err(|e| Error::Dimension(e.to_string()))?);
    }
    Ok(matrices)
}

/// Scales every nonzero row to unit Euclidean norm. Zero rows pass through.
pub fn l2_normalize(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Parameters of the planted-cluster generator.
///
/// Centroids come from a shared pool: ids `0..num_classes` are topic clusters
/// and the remaining `max_clusters - 1` ids are filler clusters. Each instance
/// draws one topic cluster, which holds a strict majority of its tokens, plus
/// `k - 1` distinct fillers. The label is the topic id, i.e. the majority
/// planted-cluster id modulo `num_classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_instances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub dim: usize,
    /// Per-instance planted cluster count is drawn uniformly from this range.
    pub min_clusters: usize,
    pub max_clusters: usize,
    pub num_classes: usize,
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_instances: 100,
            min_tokens: 24,
            max_tokens: 40,
            dim: 16,
            min_clusters: 3,
            max_clusters: 3,
            num_classes: 3,
            cluster_separation: 10.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Number of distinct centroids shared across instances.
    pub fn pool_size(&self) -> usize {
        self.num_classes + self.max_clusters - 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.min_clusters == 0 || self.min_clusters > self.max_clusters {
            return fail("need 1 <= min_clusters <= max_clusters");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return fail("need 1 <= min_tokens <= max_tokens");
        }
        if self.dim == 0 || self.num_classes == 0 {
            return fail("dim and num_classes must be positive");
        }
        if !(self.cluster_separation >= 0.0 && self.noise_sigma >= 0.0) {
            return fail("separation and noise must be non-negative");
        }
        Ok(())
    }
}

/// `synth:` option syntax, e.g.
/// `instances=100,tokens=24-40,dim=16,k=2-6,classes=3,sep=10,sigma=0.5,seed=7`.
/// Omitted keys keep their [`Default`] values.
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        fn range(v: &str) -> Option<(usize, usize)> {
            match v.split_once('-') {
                Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
                None => {
                    let x = v.trim().parse().ok()?;
                    Some((x, x))
                }
            }
        }
        let mut spec = SyntheticSpec::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("synthetic option `{part}` is not key=value")))?;
            let bad = || Error::Config(format!("bad value for synthetic option `{key}`: {value}"));
            match key.trim() {
                "instances" => spec.num_instances = value.parse().map_err(|_| bad())?,
                "tokens" => (spec.min_tokens, spec.max_tokens) = range(value).ok_or_else(bad)?,
                "dim" => spec.dim = value.parse().map_err(|_| bad())?,
                "k" => (spec.min_clusters, spec.max_clusters) = range(value).ok_or_else(bad)?,
                "classes" => spec.num_classes = value.parse().map_err(|_| bad())?,
                "sep" => spec.cluster_separation = value.parse().map_err(|_| bad())?,
                "sigma" => spec.noise_sigma = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown synthetic option `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Centroids at pairwise distance `separation`: scaled rows of a random
/// orthonormal frame when `dim >= count`, random directions otherwise.
fn planted_centroids(count: usize, dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let radius = separation / std::f64::consts::SQRT_2;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if basis.len() < dim {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * radius).collect())
        .collect()
}

/// Deterministic planted-cluster dataset; see [`SyntheticSpec`].
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = planted_centroids(spec.pool_size(), spec.dim, spec.cluster_separation, &mut rng);
    let filler_pool = spec.max_clusters - 1;

    let mut instances = Vec::with_capacity(spec.num_instances);
    for idx in 0..spec.num_instances {
        let n = rng.random_range(spec.min_tokens..=spec.max_tokens);
        let k = rng
            .random_range(spec.min_clusters..=spec.max_clusters)
            .min(n.saturating_sub(1).max(1));
        let topic = rng.random_range(0..spec.num_classes);
        let mut clusters = vec![topic];
        clusters.extend(
            index::sample(&mut rng, filler_pool, k - 1)
                .into_iter()
                .map(|f| spec.num_classes + f),
        );

        // Fillers get `base` tokens each, the topic cluster the rest
        // (at least base + 1).
        let base = if k > 1 { (n - 1) / k } else { 0 };
        let mut planted = Vec::with_capacity(n);
        for &c in &clusters[1..] {
            planted.extend(std::iter::repeat_n(c, base));
        }
        planted.extend(std::iter::repeat_n(topic, n - base * (k - 1)));
        planted.shuffle(&mut rng);

        let mut values = Vec::with_capacity(n * spec.dim);
        for &c in &planted {
            for &mu in &centroids[c] {
                let noise = if spec.noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.noise_sigma * z
                } else {
                    0.0
                };
                values.push(f64::from((mu + noise) as f32));
            }
        }
        let embeddings = Array2::from_shape_vec((n, spec.dim), values).map_err(|e| Error::Dimension(e.to_string()))?;
        let tokens = planted.iter().map(|c| format!("c{c}")).collect();
        let aspect = planted.iter().position(|&c| c == topic).into_iter().collect();
        let instance = SentenceInstance::new(format!("synth-{}-{idx}", spec.seed), tokens, topic, aspect, embeddings)?
            .with_planted(planted)?;
        instances.push(instance);
    }
    Dataset::new(instances, spec.num_classes, spec.dim)
}
