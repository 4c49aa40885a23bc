//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic (8 bytes) | version u32
//! config length u64 | config block (UTF-8 `key = value` lines)
//! parameter count u64
//!   per parameter: name length u32 | name | dim count u32 | dims u64… | values f64…
//! checksum u64 (first 8 bytes of SHA-256 over everything before it)
//! ```

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::baseline::{BaselineConfig, BaselineModel};
use super::experiment::Modalities;
use super::model::{Network, TrainedModel};
use super::History;
use crate::data::{FeatureStats, TargetScaler};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionModel};
use crate::numerics::{ParamSet, Rng};

pub const MAGIC: &[u8; 8] = b"DDFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum NetworkSpec {
    Fusion { config: FusionConfig },
    Baseline { config: BaselineConfig },
}

#[derive(Serialize, Deserialize)]
struct Meta {
    network: NetworkSpec,
    modalities: Modalities,
    scaler: Option<TargetScaler>,
    features: Option<FeatureStats>,
    window: Option<usize>,
    seed: u64,
    history: History,
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}

fn config_block(meta: &Meta) -> Result<String> {
    let mut pairs = Vec::new();
    flatten("", &serde_json::to_value(meta)?, &mut pairs);
    Ok(pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect())
}

fn parse_config_block(text: &str) -> Result<Meta> {
    let mut root = Map::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
        let value: Value = serde_json::from_str(value)?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().unwrap_or_default();
        let mut node = &mut root;
        for part in parts {
            node = node
                .entry(part)
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| Error::Checkpoint(format!("config key {key} conflicts with a value")))?;
        }
        node.insert(last.to_string(), value);
    }
    serde_json::from_value(Value::Object(root)).map_err(|e| Error::Checkpoint(format!("config block: {e}")))
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn encode(model: &TrainedModel) -> Result<Vec<u8>> {
    let meta = Meta {
        network: match &model.network {
            Network::Fusion(m) => NetworkSpec::Fusion {
                config: m.config.clone(),
            },
            Network::Baseline(m) => NetworkSpec::Baseline {
                config: m.config.clone(),
            },
        },
        modalities: model.modalities,
        scaler: model.scaler,
        features: model.features.clone(),
        window: model.window,
        seed: model.seed,
        history: model.history.clone(),
    };
    let block = config_block(&meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(block.len() as u64).to_le_bytes());
    buf.extend_from_slice(block.as_bytes());
    let params = model.network.params();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, p) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for d in p.value.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

pub fn checkpoint_write<W: Write>(mut writer: W, model: &TrainedModel) -> Result<()> {
    writer.write_all(&encode(model)?)?;
    writer.flush()?;
    Ok(())
}

pub fn checkpoint_save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(model)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of parameter records".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows".into()))
    }
}

pub fn checkpoint_read(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Checkpoint("checksum mismatch: file truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if checksum(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch: file truncated or corrupt".into()));
    }
    let mut cur = Cursor {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let block_len = cur.len()?;
    let block = std::str::from_utf8(cur.take(block_len)?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let meta = parse_config_block(block)?;

    let mut rng = Rng::new(0);
    let mut network = match meta.network {
        NetworkSpec::Fusion { config } => Network::Fusion(FusionModel::new(config, &mut rng)?),
        NetworkSpec::Baseline { config } => Network::Baseline(BaselineModel::new(config, &mut rng)?),
    };
    let count = cur.len()?;
    let mut loaded = ParamSet::new();
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| cur.len()).collect::<Result<_>>()?;
        let expected = network
            .params()
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} does not belong to the configured model")))?;
        if expected.shape() != dims.as_slice() {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch for {name}: config implies {:?}, file has {dims:?}",
                expected.shape()
            )));
        }
        let n: usize = dims.iter().product();
        let raw = cur.take(n * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let kind = network.params().kind(&name).expect("checked above");
        loaded.insert(&name, crate::numerics::Tensor::new(&dims, values)?, kind)?;
        seen.insert(name);
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter records".into()));
    }
    if let Some(missing) = network.params().names().find(|n| !seen.contains(*n)) {
        return Err(Error::Checkpoint(format!("parameter {missing} missing from file")));
    }
    network.params_mut().assign_from(&loaded)?;
    Ok(TrainedModel {
        network,
        modalities: meta.modalities,
        scaler: meta.scaler,
        features: meta.features,
        window: meta.window,
        history: meta.history,
        seed: meta.seed,
    })
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    checkpoint_read(&std::fs::read(path)?)
}
