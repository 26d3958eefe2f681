//! MNET checkpoint files.
//!
//! Layout: magic "MNET" | u32-LE tensor count | per tensor: u32-LE name
//! length, UTF-8 name, u32-LE rank, u32-LE dims, f32-LE data | u32-LE JSON
//! length, UTF-8 JSON metadata (spec echo, epoch, seed).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::net::{alloc_model, Model};
use crate::model::spec::ModelSpec;
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"MNET";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub epoch: usize,
    pub seed: u64,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

pub fn save_checkpoint(model: &Model, epoch: usize, seed: u64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let names = model.param_names();
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in names.iter().zip(&params) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let meta = CheckpointMeta { spec: model.spec.clone(), epoch, seed };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| format_err(self.path, "truncated checkpoint"))?;
        Ok(u32::from_le_bytes(buf))
    }

    fn bytes(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| format_err(self.path, "truncated checkpoint"))?;
        Ok(buf)
    }
}

fn read_tensors(r: &mut Reader) -> Result<BTreeMap<String, Tensor<f32>>> {
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| format_err(r.path, "tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape.iter().product::<usize>();
        let raw = r.bytes(numel * 4)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| format_err(r.path, format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(format_err(r.path, format!("duplicate tensor {name}")));
        }
    }
    Ok(tensors)
}

fn read_meta(r: &mut Reader) -> Result<CheckpointMeta> {
    let json_len = r.u32()? as usize;
    let json = r.bytes(json_len)?;
    serde_json::from_slice(&json)
        .map_err(|e| format_err(r.path, format!("metadata does not parse: {e}")))
}

fn open(path: &Path) -> Result<Reader<'_>> {
    let mut r = Reader { inner: BufReader::new(File::open(path)?), path };
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(format_err(path, "bad magic, not an MNET checkpoint"));
    }
    Ok(r)
}

/// Loads a checkpoint whose stored tensors and spec echo must match `spec`
/// exactly; errors name the first offending tensor.
pub fn load_checkpoint(path: &Path, spec: &ModelSpec) -> Result<Model> {
    let mut r = open(path)?;
    let mut stored = read_tensors(&mut r)?;
    let meta = read_meta(&mut r)?;

    let mut model = alloc_model(spec)?;
    let names = model.param_names();
    for (name, param) in names.iter().zip(model.params_mut()) {
        let tensor = stored
            .remove(name)
            .ok_or_else(|| format_err(path, format!("missing tensor {name}")))?;
        if tensor.shape() != param.shape() {
            return Err(format_err(
                path,
                format!(
                    "tensor {name} has shape {:?}, spec wants {:?}",
                    tensor.shape(),
                    param.shape()
                ),
            ));
        }
        param.data_mut().copy_from_slice(tensor.data());
    }
    if let Some(extra) = stored.keys().next() {
        return Err(format_err(path, format!("unexpected tensor {extra}")));
    }
    if meta.spec != *spec {
        return Err(format_err(path, "metadata spec does not match the requested spec"));
    }
    Ok(model)
}

/// Reads only the metadata block, skipping tensor payloads.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let mut r = open(path)?;
    let count = r.u32()? as usize;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        r.bytes(name_len)?;
        let rank = r.u32()? as usize;
        let mut numel = 1usize;
        for _ in 0..rank {
            numel *= r.u32()? as usize;
        }
        r.bytes(numel * 4)?;
    }
    read_meta(&mut r)
}
