//! `checkpoint.bin` weights blobs and `checkpoint.meta` sidecars.
//!
//! Blob layout (little endian): the 8-byte magic `DOCTAW01`, a `u32` tensor
//! count, then per tensor a `u16` name length, the UTF-8 name, a `u8` rank,
//! `rank` × `u32` dims and the `f64` values.
//!
//! The sidecar is `key=value` lines carrying the model spec, the selection
//! result, the seed and the SHA-256 of the blob.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Model, ModelSpec, PretrainSource, Registry, Task};
use crate::data::Lesion;
use crate::error::{Error, Result};
use crate::metrics::SelectionMetric;
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"DOCTAW01";
pub const BIN_FILE: &str = "checkpoint.bin";
pub const META_FILE: &str = "checkpoint.meta";

const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode_weights(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated while reading {what} at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, String> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_weights(bytes: &[u8]) -> std::result::Result<Vec<TensorRecord>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err("bad magic".into());
    }
    let count = r.u32("tensor count")? as usize;
    let mut out: Vec<TensorRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| format!("tensor {t}: name is not UTF-8"))?
            .to_string();
        if name.is_empty() {
            return Err(format!("tensor {t}: empty name"));
        }
        if !seen.insert(name.clone()) {
            return Err(format!("duplicate tensor `{name}`"));
        }
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(format!("`{name}`: rank {rank} outside 1..={MAX_RANK}"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len: usize = 1;
        for _ in 0..rank {
            let d = r.u32("dim")? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| format!("`{name}`: shape overflows"))?;
            shape.push(d);
        }
        let byte_len = len
            .checked_mul(8)
            .ok_or_else(|| format!("`{name}`: shape overflows"))?;
        let raw = r.take(byte_len, "values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format!("`{name}`: non-finite value"));
        }
        out.push(TensorRecord { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Selection outcome stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointInfo {
    pub fold_id: usize,
    pub epoch: usize,
    pub metric: SelectionMetric,
    pub value: f64,
    pub seed: u64,
    pub lesion: Option<Lesion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub weights_path: PathBuf,
    pub model_spec: ModelSpec,
    pub fold_id: usize,
    pub epoch: usize,
    pub val_metric_name: SelectionMetric,
    pub val_metric_value: f64,
    pub seed: u64,
    pub weights_sha256: String,
    pub lesion: Option<Lesion>,
}

impl CheckpointRecord {
    pub fn to_meta_string(&self) -> String {
        let s = &self.model_spec;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("weights_sha256", self.weights_sha256.clone());
        kv("arch", s.arch.clone());
        kv("task", s.task.to_string());
        kv("encoder", s.encoder.clone().unwrap_or_default());
        kv("num_outputs", s.num_outputs.to_string());
        kv("input_size", s.input_size.to_string());
        kv("in_channels", s.in_channels.to_string());
        kv("pretrain_source", s.pretrain_source.to_string());
        kv("fold_id", self.fold_id.to_string());
        kv("epoch", self.epoch.to_string());
        kv("val_metric_name", self.val_metric_name.to_string());
        kv("val_metric_value", self.val_metric_value.to_string());
        kv("seed", self.seed.to_string());
        kv("lesion", self.lesion.map(|l| l.to_string()).unwrap_or_default());
        out
    }

    /// Directory holding the checkpoint files.
    pub fn dir(&self) -> &Path {
        self.weights_path.parent().unwrap_or(Path::new("."))
    }
}

const META_KEYS: [&str; 14] = [
    "weights_sha256",
    "arch",
    "task",
    "encoder",
    "num_outputs",
    "input_size",
    "in_channels",
    "pretrain_source",
    "fold_id",
    "epoch",
    "val_metric_name",
    "val_metric_value",
    "seed",
    "lesion",
];

/// Parses a sidecar. `weights_path` is set to the bare blob file name.
pub fn parse_meta(text: &str, source_name: &str) -> Result<CheckpointRecord> {
    let mut map: HashMap<&str, (usize, &str)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source_name, i + 1, "expected key=value"))?;
        let k = k.trim();
        if !META_KEYS.contains(&k) {
            return Err(Error::parse(source_name, i + 1, format!("unknown key `{k}`")));
        }
        if map.insert(k, (i + 1, v.trim())).is_some() {
            return Err(Error::parse(source_name, i + 1, format!("duplicate key `{k}`")));
        }
    }
    let get = |k: &str| -> Result<(usize, &str)> {
        map.get(k)
            .copied()
            .ok_or_else(|| Error::parse(source_name, 0, format!("missing key `{k}`")))
    };
    fn num<T: std::str::FromStr>(source: &str, (line, v): (usize, &str), k: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::parse(source, line, format!("`{k}`: cannot parse `{v}`")))
    }
    let relabel = |line: usize, e: Error| match e {
        Error::InvalidArgument(msg) => Error::parse(source_name, line, msg),
        other => other,
    };

    let (hl, hash) = get("weights_sha256")?;
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::parse(source_name, hl, "weights_sha256 must be 64 hex digits"));
    }
    let (al, arch) = get("arch")?;
    if arch.is_empty() {
        return Err(Error::parse(source_name, al, "empty arch"));
    }
    let (tl, task) = get("task")?;
    let task: Task = task.parse().map_err(|e| relabel(tl, e))?;
    let encoder = get("encoder").ok().map(|(_, v)| v).filter(|v| !v.is_empty()).map(String::from);
    let (pl, pretrain) = get("pretrain_source")?;
    let pretrain_source: PretrainSource = pretrain.parse().map_err(|e| relabel(pl, e))?;
    let (ml, metric) = get("val_metric_name")?;
    let val_metric_name: SelectionMetric = metric.parse().map_err(|e| relabel(ml, e))?;
    let vv = get("val_metric_value")?;
    let val_metric_value: f64 = num(source_name, vv, "val_metric_value")?;
    if !val_metric_value.is_finite() {
        return Err(Error::parse(source_name, vv.0, "val_metric_value must be finite"));
    }
    let lesion = match get("lesion").ok().filter(|(_, v)| !v.is_empty()) {
        Some((ll, v)) => Some(v.parse::<Lesion>().map_err(|e| relabel(ll, e))?),
        None => None,
    };
    Ok(CheckpointRecord {
        weights_path: PathBuf::from(BIN_FILE),
        model_spec: ModelSpec {
            task,
            arch: arch.to_string(),
            encoder,
            num_outputs: num(source_name, get("num_outputs")?, "num_outputs")?,
            input_size: num(source_name, get("input_size")?, "input_size")?,
            pretrain_source,
            in_channels: num(source_name, get("in_channels")?, "in_channels")?,
        },
        fold_id: num(source_name, get("fold_id")?, "fold_id")?,
        epoch: num(source_name, get("epoch")?, "epoch")?,
        val_metric_name,
        val_metric_value,
        seed: num(source_name, get("seed")?, "seed")?,
        weights_sha256: hash.to_ascii_lowercase(),
        lesion,
    })
}

/// Writes `checkpoint.bin` and `checkpoint.meta` into `dir`.
pub fn save_checkpoint(model: &Model, dir: &Path, info: &CheckpointInfo) -> Result<CheckpointRecord> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob = encode_weights(model.params());
    let weights_path = dir.join(BIN_FILE);
    std::fs::write(&weights_path, &blob).map_err(|e| Error::io(&weights_path, e))?;
    let record = CheckpointRecord {
        weights_path,
        model_spec: model.spec().clone(),
        fold_id: info.fold_id,
        epoch: info.epoch,
        val_metric_name: info.metric,
        val_metric_value: info.value,
        seed: info.seed,
        weights_sha256: sha256_hex(&blob),
        lesion: info.lesion,
    };
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, record.to_meta_string()).map_err(|e| Error::io(&meta_path, e))?;
    Ok(record)
}

/// Reads a sidecar; `path` may be the checkpoint directory, the `.meta` or the `.bin` file.
pub fn load_record(path: &Path) -> Result<CheckpointRecord> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut record = parse_meta(&text, &meta_path.display().to_string())?;
    record.weights_path = dir.join(BIN_FILE);
    if !record.weights_path.is_file() {
        return Err(Error::io(
            &record.weights_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "weights file missing"),
        ));
    }
    Ok(record)
}

fn read_blob(path: &Path) -> Result<(Vec<u8>, Vec<TensorRecord>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode_weights(&bytes).map_err(|msg| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        msg,
    })?;
    Ok((bytes, tensors))
}

/// Rebuilds the model described by `record`, checking the weights hash.
pub fn load_model(record: &CheckpointRecord, registry: &Registry) -> Result<Model> {
    let path = &record.weights_path;
    let (bytes, tensors) = read_blob(path)?;
    let hash = sha256_hex(&bytes);
    if hash != record.weights_sha256 {
        return Err(Error::CorruptCheckpoint {
            path: path.clone(),
            msg: format!("sha256 {hash} does not match recorded {}", record.weights_sha256),
        });
    }
    let mut model = registry.build(&record.model_spec, record.seed)?;
    let store = model.params_mut();
    if tensors.len() != store.len() {
        return Err(Error::CheckpointMismatch {
            path: path.clone(),
            msg: format!("{} tensors, model has {}", tensors.len(), store.len()),
        });
    }
    for t in tensors {
        let p = store.get_mut(&t.name).ok_or_else(|| Error::CheckpointMismatch {
            path: path.clone(),
            msg: format!("model has no parameter `{}`", t.name),
        })?;
        if p.shape != t.shape {
            return Err(Error::CheckpointMismatch {
                path: path.clone(),
                msg: format!("`{}`: shape {:?} vs model {:?}", t.name, t.shape, p.shape),
            });
        }
        p.value = t.data;
    }
    Ok(model)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdaptReport {
    pub loaded: Vec<String>,
    pub skipped: Vec<String>,
    pub notes: Vec<String>,
}

/// Loads trunk weights from a checkpoint into `model`.
///
/// Groups whose tensors match by name and shape are copied. A mismatched head
/// group keeps its fresh initialization and is reported as skipped, or is an
/// error when `strict_head` is set. Any mismatched trunk group is an error.
pub fn adapt_pretrained(mut model: Model, checkpoint: &Path, strict_head: bool) -> Result<(Model, AdaptReport)> {
    let path = if checkpoint.is_dir() {
        checkpoint.join(BIN_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    let (bytes, tensors) = read_blob(&path)?;
    let meta_path = path.with_file_name(META_FILE);
    if let Ok(text) = std::fs::read_to_string(&meta_path) {
        if let Ok(rec) = parse_meta(&text, &meta_path.display().to_string()) {
            if rec.weights_sha256 != sha256_hex(&bytes) {
                return Err(Error::CorruptCheckpoint {
                    path,
                    msg: "weights do not match the sidecar hash".into(),
                });
            }
        }
    }
    let by_name: HashMap<&str, &TensorRecord> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut ckpt_groups: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tensors {
        *ckpt_groups.entry(t.name.split('.').next().unwrap_or(&t.name)).or_default() += 1;
    }
    let heads = model.head_groups();
    let mut report = AdaptReport::default();
    let groups = model.params().groups();
    for group in groups {
        let names: Vec<(String, Vec<usize>)> = model
            .params()
            .iter()
            .filter(|p| p.group() == group)
            .map(|p| (p.name.clone(), p.shape.clone()))
            .collect();
        let mismatch = names.iter().find_map(|(n, shape)| match by_name.get(n.as_str()) {
            None => Some(format!("`{n}` missing from checkpoint")),
            Some(t) if &t.shape != shape => Some(format!("`{n}`: checkpoint {:?} vs model {:?}", t.shape, shape)),
            _ => None,
        });
        let extra = ckpt_groups.get(group.as_str()).copied().unwrap_or(0) != names.len();
        let mismatch = mismatch.or_else(|| extra.then(|| format!("group `{group}` has a different tensor set")));
        match mismatch {
            None => {
                for (n, _) in &names {
                    model.params_mut().get_mut(n).unwrap().value = by_name[n.as_str()].data.clone();
                }
                report.loaded.push(group);
            }
            Some(msg) if heads.contains(&group) && !strict_head => {
                report.notes.push(format!("head `{group}` reinitialized: {msg}"));
                report.skipped.push(group);
            }
            Some(msg) => {
                return Err(Error::CheckpointMismatch { path, msg });
            }
        }
    }
    Ok((model, report))
}
