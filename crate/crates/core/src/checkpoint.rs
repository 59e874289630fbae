//! Checkpoint bundles: a directory holding `manifest.json` and one
//! self-describing parameter file per objective.
//!
//! An objective file is `MODQNPRM`, a little-endian `u32` format version, a
//! `u32` header length, a JSON header naming every tensor with its shape and
//! byte offset, then the tensors as little-endian `f32`. Because each file
//! carries its own table, an objective trained elsewhere can be attached to an
//! ensemble by dropping its file into the bundle.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CheckpointError;
use crate::nn::{AdamConfig, AdamState, Network, NetworkSpec, ParamSet, Tensor};
use crate::objective::{ObjectiveConfig, ObjectiveDqn};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OBJECTIVE_EXT: &str = "params";
const MAGIC: &[u8; 8] = b"MODQNPRM";

/// Hex SHA-256 of the spec's JSON form.
pub fn spec_digest(spec: &NetworkSpec) -> String {
    let json = serde_json::to_vec(spec).expect("network spec serializes");
    hex(&Sha256::digest(json))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub objectives: Vec<String>,
    pub network_spec: NetworkSpec,
    pub spec_digest: String,
    pub seed: u64,
    pub training_step: u64,
    pub dv_enabled: bool,
}

/// Optimizer-side state, present when a checkpoint is meant to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub target: ParamSet<f32>,
    pub adam_config: AdamConfig,
    pub adam_step: u64,
    pub adam_m: ParamSet<f32>,
    pub adam_v: ParamSet<f32>,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveRecord {
    pub name: String,
    pub params: ParamSet<f32>,
    pub training: Option<TrainingState>,
}

impl ObjectiveRecord {
    pub fn from_dqn(dqn: &ObjectiveDqn<f32>, with_training: bool) -> Self {
        let training = with_training.then(|| TrainingState {
            target: dqn.target().params().clone(),
            adam_config: dqn.adam().config,
            adam_step: dqn.adam().step,
            adam_m: dqn.adam().m.clone(),
            adam_v: dqn.adam().v.clone(),
            updates: dqn.updates(),
        });
        Self { name: dqn.name().to_string(), params: dqn.online().params().clone(), training }
    }

    pub fn network(&self, spec: &NetworkSpec) -> Result<Network<f32>, CheckpointError> {
        Ok(Network::from_params(spec.clone(), self.params.clone())?)
    }

    /// Rebuilds a learner; without stored training state the target copies the online network.
    pub fn into_dqn(self, spec: &NetworkSpec, config: ObjectiveConfig) -> Result<ObjectiveDqn<f32>, CheckpointError> {
        let online = Network::from_params(spec.clone(), self.params)?;
        Ok(match self.training {
            None => ObjectiveDqn::from_network(self.name, online, config),
            Some(t) => {
                let target = Network::from_params(spec.clone(), t.target)?;
                let adam = AdamState { config: t.adam_config, step: t.adam_step, m: t.adam_m, v: t.adam_v };
                ObjectiveDqn::from_parts(self.name, config, online, target, adam, t.updates)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub objectives: Vec<ObjectiveRecord>,
}

impl Bundle {
    pub fn new(spec: NetworkSpec, objectives: Vec<ObjectiveRecord>, seed: u64, training_step: u64, dv_enabled: bool) -> Self {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            objectives: objectives.iter().map(|o| o.name.clone()).collect(),
            spec_digest: spec_digest(&spec),
            network_spec: spec,
            seed,
            training_step,
            dv_enabled,
        };
        Self { manifest, objectives }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.manifest.network_spec
    }

    pub fn names(&self) -> Vec<&str> {
        self.objectives.iter().map(|o| o.name.as_str()).collect()
    }

    pub fn networks(&self) -> Result<Vec<Network<f32>>, CheckpointError> {
        self.objectives.iter().map(|o| o.network(self.spec())).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    role: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveHeader {
    name: String,
    spec_digest: String,
    sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam: Option<AdamHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
    updates: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn shape_err(path: &Path, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::ShapeMismatch { path: path.to_path_buf(), msg: msg.into() }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn objective_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.{OBJECTIVE_EXT}"))
}

/// Serializes one objective in the self-describing file format.
pub fn encode_objective(spec: &NetworkSpec, record: &ObjectiveRecord) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut sections = Vec::new();
    let mut push = |role: &str, set: &ParamSet<f32>, payload: &mut Vec<u8>| {
        let mut tensors = Vec::new();
        for (name, t) in set.iter() {
            tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: payload.len() });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        sections.push(Section { role: role.to_string(), tensors });
    };
    push("online", &record.params, &mut payload);
    let mut adam = None;
    if let Some(t) = &record.training {
        push("target", &t.target, &mut payload);
        push("adam_m", &t.adam_m, &mut payload);
        push("adam_v", &t.adam_v, &mut payload);
        adam = Some(AdamHeader { config: t.adam_config, step: t.adam_step, updates: t.updates });
    }
    let header = ObjectiveHeader { name: record.name.clone(), spec_digest: spec_digest(spec), sections, adam };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Parses an objective file and checks every tensor against `spec`.
pub fn decode_objective(path: &Path, bytes: &[u8], spec: &NetworkSpec) -> Result<ObjectiveRecord, CheckpointError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(format_err(path, "not an objective parameter file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err(path, "header length exceeds file size"))?;
    let header: ObjectiveHeader =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| format_err(path, format!("bad header: {e}")))?;
    if !valid_name(&header.name) {
        return Err(format_err(path, format!("invalid objective name {:?}", header.name)));
    }
    if header.spec_digest != spec_digest(spec) {
        return Err(shape_err(path, "network spec digest differs from the bundle's"));
    }
    let payload = &bytes[header_end..];
    let expected_shapes = spec.param_shapes()?;
    let expected_len: usize = expected_shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>() * 4;
    if payload.len() != expected_len * header.sections.len() {
        return Err(shape_err(
            path,
            format!("payload is {} bytes, expected {}", payload.len(), expected_len * header.sections.len()),
        ));
    }

    let mut sets = std::collections::HashMap::new();
    for section in &header.sections {
        if section.tensors.len() != expected_shapes.len() {
            return Err(shape_err(path, format!("section {} has {} tensors", section.role, section.tensors.len())));
        }
        let mut entries = Vec::new();
        for (entry, (name, shape)) in section.tensors.iter().zip(&expected_shapes) {
            if &entry.name != name || &entry.shape != shape {
                return Err(shape_err(
                    path,
                    format!("{} {}{:?} where the network expects {}{:?}", section.role, entry.name, entry.shape, name, shape),
                ));
            }
            let len = shape.iter().product::<usize>() * 4;
            let chunk = entry
                .offset
                .checked_add(len)
                .and_then(|end| payload.get(entry.offset..end))
                .ok_or_else(|| shape_err(path, format!("tensor {} overruns the payload", entry.name)))?;
            let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            entries.push((name.clone(), Tensor::from_vec(shape, data)?));
        }
        if sets.insert(section.role.clone(), ParamSet::from_parts(entries)).is_some() {
            return Err(format_err(path, format!("duplicate section {}", section.role)));
        }
    }
    let params = sets.remove("online").ok_or_else(|| format_err(path, "missing online parameters"))?;
    let training = match header.adam {
        None if sets.is_empty() => None,
        None => return Err(format_err(path, "optimizer sections without optimizer header")),
        Some(a) => {
            let mut take = |role: &str| sets.remove(role).ok_or_else(|| format_err(path, format!("missing {role} section")));
            Some(TrainingState {
                target: take("target")?,
                adam_m: take("adam_m")?,
                adam_v: take("adam_v")?,
                adam_config: a.config,
                adam_step: a.step,
                updates: a.updates,
            })
        }
    };
    if let Some(extra) = sets.keys().next() {
        return Err(format_err(path, format!("unknown section {extra}")));
    }
    Ok(ObjectiveRecord { name: header.name, params, training })
}

pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for record in &bundle.objectives {
        if !valid_name(&record.name) {
            return Err(format_err(dir, format!("invalid objective name {:?}", record.name)));
        }
        let path = objective_path(dir, &record.name);
        fs::write(&path, encode_objective(bundle.spec(), record)).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&bundle.manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

/// Loads the manifest's objectives, then any further objective files in the directory in name order.
pub fn load_bundle(dir: &Path) -> Result<Bundle, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| format_err(&path, "no format_version"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(CheckpointError::Version(version as u32));
    }
    let mut manifest: Manifest = serde_json::from_value(value).map_err(|e| format_err(&path, e.to_string()))?;
    if manifest.spec_digest != spec_digest(&manifest.network_spec) {
        return Err(shape_err(&path, "spec digest does not match the recorded network spec"));
    }

    let mut objectives = Vec::new();
    for name in &manifest.objectives {
        if !valid_name(name) {
            return Err(format_err(&path, format!("invalid objective name {name:?}")));
        }
        let file = objective_path(dir, name);
        let bytes = fs::read(&file).map_err(io_err(&file))?;
        let record = decode_objective(&file, &bytes, &manifest.network_spec)?;
        if &record.name != name {
            return Err(format_err(&file, format!("file holds objective {:?}", record.name)));
        }
        objectives.push(record);
    }

    let mut extra: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == OBJECTIVE_EXT))
        .filter(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            !manifest.objectives.iter().any(|n| n == stem)
        })
        .collect();
    extra.sort();
    for file in extra {
        let bytes = fs::read(&file).map_err(io_err(&file))?;
        let record = decode_objective(&file, &bytes, &manifest.network_spec)?;
        if objectives.iter().any(|o: &ObjectiveRecord| o.name == record.name) {
            return Err(format_err(&file, format!("duplicate objective {:?}", record.name)));
        }
        manifest.objectives.push(record.name.clone());
        objectives.push(record);
    }
    Ok(Bundle { manifest, objectives })
}

/// Loads several bundles that must share one network spec and objective list.
pub fn load_bundles(dirs: &[PathBuf]) -> Result<Vec<Bundle>, CheckpointError> {
    let bundles: Vec<Bundle> = dirs.iter().map(|d| load_bundle(d)).collect::<Result<_, _>>()?;
    if let Some(first) = bundles.first() {
        for (b, dir) in bundles.iter().zip(dirs).skip(1) {
            if b.manifest.spec_digest != first.manifest.spec_digest || b.manifest.objectives != first.manifest.objectives {
                return Err(shape_err(dir, "bundle differs from the first in network spec or objectives"));
            }
        }
    }
    Ok(bundles)
}
