//! GLB1 checkpoint format.
//!
//! Layout: magic `GLB1`, then per tensor: name length (u32 little-endian),
//! name bytes, rank (u32 LE), each dimension (u32 LE), then the values as
//! f64 little-endian. Loading is the bit-exact inverse. Checkpoints carry
//! the network parameters plus the optimizer slots and step counter (the
//! Adam-family bias correction depends on it).

use std::path::Path;

use gradlab_core::{Network, OptimKind, Optimizer, OptimizerState, Tensor};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"GLB1";

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let truncated = |what: &str| CliError::Data {
        path: path.to_path_buf(),
        msg: format!("truncated checkpoint while reading {what}"),
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            msg: "bad magic, expected GLB1".into(),
        });
    }
    let mut pos = 4usize;
    let mut entries = Vec::new();
    while pos < bytes.len() {
        let take_u32 = |pos: &mut usize, what: &str| -> Result<u32> {
            if *pos + 4 > bytes.len() {
                return Err(truncated(what));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let name_len = take_u32(&mut pos, "name length")? as usize;
        if pos + name_len > bytes.len() {
            return Err(truncated("name"));
        }
        let name =
            String::from_utf8(bytes[pos..pos + name_len].to_vec()).map_err(|_| CliError::Data {
                path: path.to_path_buf(),
                msg: "tensor name is not UTF-8".into(),
            })?;
        pos += name_len;
        let rank = take_u32(&mut pos, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut pos, "dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        if pos + numel * 8 > bytes.len() {
            return Err(truncated("values"));
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let start = pos + i * 8;
            data.push(f64::from_le_bytes(
                bytes[start..start + 8].try_into().unwrap(),
            ));
        }
        pos += numel * 8;
        entries.push((name, Tensor::new(shape, data).map_err(CliError::Core)?));
    }
    Ok(entries)
}

/// Writes network parameters and optimizer state to one file. Parameter
/// tensors keep their `layer{i}.*` names; optimizer entries are namespaced
/// `optim.*`.
pub fn save(net: &Network, opt: &Optimizer, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    entries.extend(opt.state.export(net.params()));
    std::fs::write(path, encode(&entries)).map_err(CliError::io(path))
}

/// Restores parameters into `net` (shapes must match the architecture) and
/// rebuilds the optimizer state of the given kind. Nothing is applied if any
/// part of the file is unusable.
pub fn load(net: &mut Network, kind: OptimKind, path: &Path) -> Result<OptimizerState> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    let entries = decode(&bytes, path)?;
    let mut params = net.params().clone();
    for p in params.iter_mut() {
        let found = entries
            .iter()
            .find(|(name, _)| *name == p.name)
            .ok_or_else(|| CliError::Data {
                path: path.to_path_buf(),
                msg: format!("checkpoint is missing parameter {}", p.name),
            })?;
        if found.1.shape() != p.value.shape() {
            return Err(CliError::Data {
                path: path.to_path_buf(),
                msg: format!(
                    "parameter {} has shape {:?} in the checkpoint but the architecture expects {:?}",
                    p.name,
                    found.1.shape(),
                    p.value.shape()
                ),
            });
        }
        p.value = found.1.clone();
    }
    let state = OptimizerState::import(kind, &params, &entries).map_err(CliError::Core)?;
    net.set_params(params).map_err(CliError::Core)?;
    Ok(state)
}
