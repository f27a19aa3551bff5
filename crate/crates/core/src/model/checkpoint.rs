//! Single-file checkpoints: magic, JSON header (config echo, tensor table,
//! free-form metadata), then every tensor as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{Scalar, Tensor};
use crate::{Error, Result};

use super::config::ModelConfig;
use super::net::Dclnet;

const MAGIC: &[u8; 8] = b"DCLCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, net: &Dclnet<T>, meta: serde_json::Value) -> Result<()> {
    let entries = net.params().entries();
    let header = Header {
        model: net.config().clone(),
        meta,
        tensors: entries
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let total: usize = entries.iter().map(|e| e.value.len()).sum();
    let mut buf = Vec::with_capacity(16 + header.len() + 4 * total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for e in entries {
        for &v in e.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, rebuilding the network from the stored config and
/// checking every tensor against the rebuilt layout.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Dclnet<T>, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut net = Dclnet::<T>::new(header.model)?;
    if header.tensors.len() != net.params().entries().len() {
        return Err(bad(format!(
            "{} tensors stored, network has {}",
            header.tensors.len(),
            net.params().entries().len()
        )));
    }
    let mut offset = 16 + hlen;
    for (record, entry) in header.tensors.iter().zip(net.params_mut().entries_mut()) {
        if record.name != entry.name || record.shape != entry.value.shape() {
            return Err(bad(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                record.name,
                record.shape,
                entry.name,
                entry.value.shape()
            )));
        }
        let n = entry.value.len();
        let raw = bytes
            .get(offset..offset + 4 * n)
            .ok_or_else(|| bad(format!("truncated data for `{}`", record.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        entry.value = Tensor::new(&record.shape, data);
        offset += 4 * n;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((net, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters() {
        let cfg = ModelConfig {
            widths: vec![2, 3, 4, 5, 6],
            init_seed: 9,
            ..Default::default()
        };
        let net = Dclnet::<f32>::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &net, serde_json::json!({"epoch": 3})).unwrap();
        let (loaded, meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(meta["epoch"], 3);
        assert_eq!(loaded.config(), net.config());
        for (a, b) in loaded.params().entries().iter().zip(net.params().entries()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let net = Dclnet::<f32>::new(ModelConfig {
            widths: vec![2, 3, 4, 5, 6],
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &net, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
    }
}
