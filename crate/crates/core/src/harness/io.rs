//! Single-file containers for datasets and checkpoints.
//!
//! Both share one layout: an 8-byte magic, the JSON header length as a
//! little-endian `u64`, the UTF-8 JSON header, then raw little-endian
//! payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Result, TrainConfig};
use crate::autodiff::Tensor;
use crate::model::{ModelConfig, RagcnModel};
use crate::skeleton::{build_graph, Dataset, LabeledSample, SequenceTensor, SkeletonGraph, Split};

pub const DATASET_MAGIC: &[u8; 8] = b"RAGCNDS1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAGCNCK1";

/// Headers beyond this are rejected before allocation.
const MAX_HEADER: u64 = 1 << 30;

fn data_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Data(msg.into())
}

fn write_header<W: Write, H: Serialize>(out: &mut W, magic: &[u8; 8], header: &H) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| data_err(e.to_string()))?;
    out.write_all(magic)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read, H: DeserializeOwned>(input: &mut R, magic: &[u8; 8]) -> Result<H> {
    let mut m = [0u8; 8];
    read_exact(input, &mut m)?;
    if &m != magic {
        return Err(data_err(format!(
            "bad magic {:?}, expected {}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    read_exact(input, &mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(data_err(format!("header length {len} too large")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(input, &mut json)?;
    serde_json::from_slice(&json).map_err(|e| data_err(format!("header: {e}")))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => data_err("truncated file"),
        _ => HarnessError::Io(e),
    })
}

fn write_f32s<W: Write>(out: &mut W, xs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    read_exact(input, &mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn expect_eof<R: Read>(input: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match input.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(data_err("trailing bytes after payload")),
    }
}

fn checked_graph(g: &SkeletonGraph) -> Result<SkeletonGraph> {
    build_graph(g.num_joints(), g.edges(), g.center_joint())
        .map_err(|e| data_err(format!("graph: {e}")))
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    graph: SkeletonGraph,
    channels: usize,
    frames: usize,
    joints: usize,
    num_samples: usize,
    num_classes: usize,
    split: Split,
    ids: Vec<String>,
    labels: Vec<usize>,
    real_frames: Vec<usize>,
}

pub fn write_dataset<W: Write>(out: &mut W, ds: &Dataset) -> Result<()> {
    ds.check().map_err(HarnessError::Data)?;
    let header = DatasetHeader {
        graph: ds.graph.clone(),
        channels: ds.channels(),
        frames: ds.frames(),
        joints: ds.graph.num_joints(),
        num_samples: ds.samples.len(),
        num_classes: ds.num_classes,
        split: ds.split,
        ids: ds.samples.iter().map(|s| s.sample_id.clone()).collect(),
        labels: ds.samples.iter().map(|s| s.label).collect(),
        real_frames: ds
            .samples
            .iter()
            .map(|s| s.sequence.num_real_frames())
            .collect(),
    };
    write_header(out, DATASET_MAGIC, &header)?;
    for s in &ds.samples {
        write_f32s(out, s.sequence.data())?;
        let valid: Vec<u8> = s.sequence.valid().iter().map(|&b| b as u8).collect();
        out.write_all(&valid)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(input: &mut R) -> Result<Dataset> {
    let h: DatasetHeader = read_header(input, DATASET_MAGIC)?;
    let graph = checked_graph(&h.graph)?;
    if h.joints != graph.num_joints() {
        return Err(data_err("joint count disagrees with the graph"));
    }
    let n = h.num_samples;
    if h.ids.len() != n || h.labels.len() != n || h.real_frames.len() != n {
        return Err(data_err(
            "per-sample header lists disagree with the sample count",
        ));
    }
    let cells = h.frames * h.joints;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let data = read_f32s(input, h.channels * cells)?;
        let mut bytes = vec![0u8; cells];
        read_exact(input, &mut bytes)?;
        let valid = bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(data_err(format!("validity byte {b} in sample {i}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let sequence = SequenceTensor::from_parts(
            h.channels,
            h.frames,
            h.joints,
            h.real_frames[i],
            data,
            valid,
        )
        .ok_or_else(|| data_err(format!("sample {i} has inconsistent shape")))?;
        if !sequence.validate().is_ok() {
            return Err(data_err(format!(
                "sample {} violates the mask invariant",
                h.ids[i]
            )));
        }
        samples.push(LabeledSample {
            sequence,
            label: h.labels[i],
            sample_id: h.ids[i].clone(),
        });
    }
    expect_eof(input)?;
    let ds = Dataset {
        samples,
        num_classes: h.num_classes,
        graph,
        split: h.split,
    };
    ds.check().map_err(HarnessError::Data)?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, ds)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(HarnessError::DatasetMissing(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    read_dataset(&mut bytes.as_slice())
}

/// Content hash in the style of a git object id: SHA-256 over
/// `"blob <len>\0"` followed by the bytes, as lowercase hex.
pub fn dataset_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
    learnable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    graph: SkeletonGraph,
    /// The training configuration that produced the weights, if any.
    train: Option<TrainConfig>,
    params: Vec<BlobInfo>,
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    model: &RagcnModel<f32>,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let header = CheckpointHeader {
        model: model.config.clone(),
        graph: model.graph.clone(),
        train: train.cloned(),
        params: model
            .store
            .iter()
            .map(|(_, p)| BlobInfo {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                learnable: p.learnable,
            })
            .collect(),
    };
    write_header(out, CHECKPOINT_MAGIC, &header)?;
    for (_, p) in model.store.iter() {
        write_f32s(out, p.value.data())?;
    }
    Ok(())
}

/// Reads a checkpoint and the training configuration stored with it.
pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(RagcnModel<f32>, Option<TrainConfig>)> {
    let h: CheckpointHeader = read_header(input, CHECKPOINT_MAGIC)?;
    let graph = checked_graph(&h.graph)?;
    let mut model = RagcnModel::new(h.model, graph, 0).map_err(|e| data_err(e.to_string()))?;
    if h.params.len() != model.store.len() {
        return Err(HarnessError::CheckpointMismatch(format!(
            "{} arrays stored, model has {}",
            h.params.len(),
            model.store.len()
        )));
    }
    for info in &h.params {
        let id = model.store.id(&info.name).ok_or_else(|| {
            HarnessError::CheckpointMismatch(format!("unknown array {}", info.name))
        })?;
        let current = model.store.param(id);
        if current.value.shape() != info.shape.as_slice() || current.learnable != info.learnable {
            return Err(HarnessError::CheckpointMismatch(format!(
                "array {} has shape {:?}, expected {:?}",
                info.name,
                info.shape,
                current.value.shape()
            )));
        }
        let n = info.shape.iter().product();
        let values = read_f32s(input, n)?;
        *model.store.get_mut(id) =
            Tensor::new(&info.shape, values).map_err(|e| data_err(e.to_string()))?;
    }
    expect_eof(input)?;
    Ok((model, h.train))
}

pub fn save_checkpoint(
    path: &Path,
    model: &RagcnModel<f32>,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, train)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RagcnModel<f32>, Option<TrainConfig>)> {
    let bytes = fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

/// What produced a set of results: the command, its configuration, the
/// seeds used and content hashes of the input datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// `(path, hash)` per dataset file read.
    pub datasets: Vec<(String, String)>,
    pub crate_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seeds,
            datasets: Vec::new(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn add_dataset(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.datasets
            .push((path.display().to_string(), dataset_sha256(&bytes)));
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| data_err(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }
}
