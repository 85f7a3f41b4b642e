//! Checkpoint files: a JSON header line describing the named parameter
//! table, followed by the raw little-endian doubles in table order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::NamedParams;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: CheckpointMeta,
    params: Vec<ParamDesc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamDesc {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    entries: &[(String, &Tensor)],
) -> io::Result<()> {
    let header = Header {
        meta: meta.clone(),
        params: entries
            .iter()
            .map(|(n, t)| ParamDesc {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, t) in entries {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn load_checkpoint(path: &Path) -> io::Result<(CheckpointMeta, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut entries = Vec::with_capacity(header.params.len());
    for desc in &header.params {
        let n: usize = desc.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(desc.shape.clone(), data)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        entries.push((desc.name.clone(), t));
    }
    Ok((header.meta, entries))
}

/// Copy loaded entries into a correctly-dimensioned parameter struct,
/// matching by name and shape.
pub fn load_into(
    target: &mut impl NamedParams,
    entries: &[(String, Tensor)],
) -> Result<(), String> {
    let mut view = target.named_mut();
    if view.len() != entries.len() {
        return Err(format!(
            "parameter count mismatch: checkpoint has {}, target has {}",
            entries.len(),
            view.len()
        ));
    }
    for ((name, slot), (e_name, e_tensor)) in view.iter_mut().zip(entries.iter()) {
        if name != e_name {
            return Err(format!("parameter order mismatch: {name} vs {e_name}"));
        }
        if slot.shape() != e_tensor.shape() {
            return Err(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                slot.shape(),
                e_tensor.shape()
            ));
        }
        **slot = e_tensor.clone();
    }
    Ok(())
}
