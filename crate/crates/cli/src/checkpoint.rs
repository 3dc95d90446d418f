//! The ADLT checkpoint container.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic "ADLT" (4 bytes)
//! version     u32 = 1
//! header_len  u64
//! header      UTF-8 JSON, exactly header_len bytes:
//!             { config, adam_t, tensors: [{name, shape, dtype, offset}] }
//! blobs       raw little-endian scalars, one run per descriptor, in
//!             descriptor order; offsets are relative to the blob section
//! ```
//!
//! Descriptors cover, in order: trainable parameters (graph order), batch
//! norm running statistics, then optional Adam first/second moments under
//! `adam.m.*` / `adam.v.*`. A round trip is bitwise lossless, so
//! save -> load -> save reproduces the file byte for byte.

use std::path::Path;

use adlite_core::graph::{build_adlite, ModelGraph};
use adlite_core::optim::AdamState;
use adlite_core::{Error, Result, Rng, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 4] = b"ADLT";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorDesc {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    adam_t: Option<u64>,
    tensors: Vec<TensorDesc>,
}

fn push_blob<T: Scalar>(blobs: &mut Vec<u8>, descs: &mut Vec<TensorDesc>, name: &str, t: &Tensor<T>) {
    descs.push(TensorDesc {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        dtype: T::DTYPE.name().to_string(),
        offset: blobs.len() as u64,
    });
    for &v in t.data() {
        v.write_le(blobs);
    }
}

pub fn encode<T: Scalar>(
    config: &RunConfig,
    graph: &ModelGraph<T>,
    adam: Option<&AdamState<T>>,
) -> Result<Vec<u8>> {
    let mut descs = Vec::new();
    let mut blobs = Vec::new();
    for (name, t) in graph.named_params() {
        push_blob(&mut blobs, &mut descs, &name, t);
    }
    for (name, t) in graph.named_state() {
        push_blob(&mut blobs, &mut descs, &name, t);
    }
    if let Some(state) = adam {
        let (m, v) = state.moments();
        for ((name, _), t) in graph.named_params().iter().zip(m) {
            push_blob(&mut blobs, &mut descs, &format!("adam.m.{name}"), t);
        }
        for ((name, _), t) in graph.named_params().iter().zip(v) {
            push_blob(&mut blobs, &mut descs, &format!("adam.v.{name}"), t);
        }
    }
    let header = Header {
        config: config.clone(),
        adam_t: adam.map(|a| a.step_count()),
        tensors: descs,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Config(format!("header: {e}")))?;

    let mut out = Vec::with_capacity(4 + 4 + 8 + header_bytes.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blobs);
    Ok(out)
}

pub fn save<T: Scalar>(
    path: &Path,
    config: &RunConfig,
    graph: &ModelGraph<T>,
    adam: Option<&AdamState<T>>,
) -> Result<()> {
    std::fs::write(path, encode(config, graph, adam)?)?;
    Ok(())
}

fn parse_frame(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 {
        return Err(Error::format(0, "file shorter than the fixed header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:?}, expected \"ADLT\"", &bytes[0..4]),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > bytes.len() {
        return Err(Error::format(
            8,
            format!("header_len {header_len} overruns the file"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::format(16, format!("header: {e}")))?;
    Ok((header, &bytes[16 + header_len..]))
}

/// Element type stored in a checkpoint, read from the header only.
pub fn peek_precision(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let (header, _) = parse_frame(&bytes)?;
    Ok(header.config.precision.clone())
}

fn read_tensor<T: Scalar>(blobs: &[u8], desc: &TensorDesc) -> Result<Tensor<T>> {
    if desc.dtype != T::DTYPE.name() {
        return Err(Error::format(
            0,
            format!(
                "tensor \"{}\" stored as {}, reader expects {}",
                desc.name,
                desc.dtype,
                T::DTYPE.name()
            ),
        ));
    }
    let count: usize = desc.shape.iter().product();
    let bytes_len = count * T::DTYPE.size_bytes();
    let start = desc.offset as usize;
    let end = start
        .checked_add(bytes_len)
        .ok_or_else(|| Error::format(desc.offset, format!("tensor \"{}\" overflows", desc.name)))?;
    if end > blobs.len() {
        return Err(Error::format(
            desc.offset,
            format!("tensor \"{}\" overruns the blob section", desc.name),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        data.push(T::read_le(&blobs[start + i * T::DTYPE.size_bytes()..]));
    }
    Tensor::new(desc.shape.clone(), data)
}

pub struct LoadedCheckpoint<T: Scalar> {
    pub config: RunConfig,
    pub graph: ModelGraph<T>,
    pub adam: Option<AdamState<T>>,
}

pub fn load<T: Scalar>(path: &Path) -> Result<LoadedCheckpoint<T>> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<LoadedCheckpoint<T>> {
    let (header, blobs) = parse_frame(bytes)?;
    // A checkpointed config always carries its resolved class count.
    let model_cfg = header.config.model_config(None)?;
    // Parameters are overwritten below; the init stream is irrelevant.
    let mut graph = build_adlite::<T>(&model_cfg, &mut Rng::new(0))?;

    let find = |name: &str| -> Result<&TensorDesc> {
        header
            .tensors
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::format(16, format!("missing tensor \"{name}\"")))
    };

    for (name, t) in graph.named_params_mut() {
        let desc = find(&name)?;
        let loaded = read_tensor::<T>(blobs, desc)?;
        if loaded.shape() != t.shape() {
            return Err(Error::format(
                desc.offset,
                format!(
                    "tensor \"{name}\": stored shape {:?} vs graph shape {:?}",
                    loaded.shape(),
                    t.shape()
                ),
            ));
        }
        *t = loaded;
    }
    for (name, t) in graph.named_state_mut() {
        let desc = find(&name)?;
        *t = read_tensor::<T>(blobs, desc)?;
    }

    let adam = match header.adam_t {
        Some(t_count) => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (name, _) in graph.named_params() {
                m.push(read_tensor::<T>(blobs, find(&format!("adam.m.{name}"))?)?);
                v.push(read_tensor::<T>(blobs, find(&format!("adam.v.{name}"))?)?);
            }
            Some(AdamState::from_parts(m, v, t_count))
        }
        None => None,
    };

    Ok(LoadedCheckpoint {
        config: header.config,
        graph,
        adam,
    })
}
