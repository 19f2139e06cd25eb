//! Checkpoint format: a JSON manifest naming flat parameter tensors plus a
//! binary blob of little-endian f32 values.
//!
//! `<stem>.json` lists entries as {name, shape, offset, count} where
//! `offset`/`count` are in f32 units into `<stem>.bin`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT: &str = "dpn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub entries: Vec<Entry>,
}

/// Write `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
pub fn save(dir: &Path, stem: &str, named: &[(String, &Tensor)]) -> Result<()> {
    let mut entries = Vec::with_capacity(named.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in named {
        let count = tensor.numel() as u64;
        entries.push(Entry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            count,
        });
        for &v in tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += count;
    }
    let manifest = Manifest { format: FORMAT.into(), version: VERSION, entries };
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
    let mut f = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
    f.write_all(&blob)?;
    Ok(())
}

/// Read a checkpoint back as name -> (shape, f64 values).
pub fn load(dir: &Path, stem: &str) -> Result<BTreeMap<String, (Vec<usize>, Vec<f64>)>> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("unexpected checkpoint format '{}'", manifest.format)));
    }
    let mut blob = Vec::new();
    std::fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut blob)?;
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        let numel: usize = e.shape.iter().product();
        if numel as u64 != e.count {
            return Err(Error::Format(format!("entry '{}' count does not match shape", e.name)));
        }
        let start = e.offset as usize * 4;
        let end = start + e.count as usize * 4;
        if end > blob.len() {
            return Err(Error::Format(format!("entry '{}' runs past the blob", e.name)));
        }
        let values = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.insert(e.name.clone(), (e.shape.clone(), values));
    }
    Ok(out)
}

/// Replace every named parameter of a model from loaded checkpoint data.
/// Names absent from the checkpoint are an error; extra checkpoint entries
/// (for example auxiliary heads the model does not carry) are ignored.
pub fn apply(
    loaded: &BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    named_mut: Vec<(String, &mut Tensor)>,
) -> Result<()> {
    for (name, slot) in named_mut {
        let (shape, values) = loaded
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing '{name}'")))?;
        if shape != slot.shape() {
            return Err(Error::Format(format!(
                "checkpoint entry '{name}' has shape {:?}, model wants {:?}",
                shape,
                slot.shape()
            )));
        }
        *slot = Tensor::param(shape, values.clone())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let w = Tensor::param(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, 2.5, -0.75]).unwrap();
        let b = Tensor::param(&[1, 3], vec![0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64]).unwrap();
        save(dir.path(), "ckpt", &[("layer/weight".into(), &w), ("layer/bias".into(), &b)]).unwrap();
        let loaded = load(dir.path(), "ckpt").unwrap();
        assert_eq!(loaded.len(), 2);
        let (shape, values) = &loaded["layer/weight"];
        assert_eq!(shape, &vec![2, 3]);
        assert_eq!(values, w.data()); // exactly representable in f32
        let (_, bv) = &loaded["layer/bias"];
        assert_eq!(bv, b.data());
    }

    #[test]
    fn apply_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let w = Tensor::param(&[2, 2], vec![1.0; 4]).unwrap();
        save(dir.path(), "ckpt", &[("w".into(), &w)]).unwrap();
        let loaded = load(dir.path(), "ckpt").unwrap();
        let mut wrong = Tensor::param(&[1, 4], vec![0.0; 4]).unwrap();
        assert!(apply(&loaded, vec![("w".into(), &mut wrong)]).is_err());
    }
}
