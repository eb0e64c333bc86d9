//! Model parameter persistence.
//!
//! Little-endian binary format: the magic `RFMLMDL1`, a fixed config block,
//! then named tensor records of (u32 name length, name bytes, u32 rank,
//! u32 dims, binary32 row-major payload). Parameters are binary32 at rest,
//! so `load(save(p)) == p` bit-exactly for anything this crate produces.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{BatchNormParams, ModelConfig, ModelParams, NormMode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RFMLMDL1";

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.data.len() {
            return Err(Error::corrupt("truncated model file"));
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn push_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn tensor_list(params: &ModelParams) -> Vec<(String, Vec<usize>, &[f64])> {
    let cfg = &params.config;
    let (c1, c2, kw) = (cfg.conv1_channels, cfg.conv2_channels, cfg.kernel_width);
    let mut list: Vec<(String, Vec<usize>, &[f64])> = vec![
        ("conv1.weight".into(), vec![c1, 1, 1, kw], &params.conv1_w),
        ("conv2.weight".into(), vec![c2, c1, 2, kw], &params.conv2_w),
        ("conv2.bias".into(), vec![c2], &params.conv2_b),
        (
            "fc1.weight".into(),
            vec![cfg.fc1_units, cfg.flat_len()],
            &params.fc1_w,
        ),
        ("fc1.bias".into(), vec![cfg.fc1_units], &params.fc1_b),
        (
            "fc2.weight".into(),
            vec![cfg.num_classes, cfg.fc1_units],
            &params.fc2_w,
        ),
        ("fc2.bias".into(), vec![cfg.num_classes], &params.fc2_b),
    ];
    if let Some(bn) = &params.bn {
        list.push(("bn1.gamma".into(), vec![c2], &bn.bn1_gamma));
        list.push(("bn1.beta".into(), vec![c2], &bn.bn1_beta));
        list.push(("bn1.running_mean".into(), vec![c2], &bn.bn1_mean));
        list.push(("bn1.running_var".into(), vec![c2], &bn.bn1_var));
        list.push(("bn2.gamma".into(), vec![cfg.fc1_units], &bn.bn2_gamma));
        list.push(("bn2.beta".into(), vec![cfg.fc1_units], &bn.bn2_beta));
        list.push(("bn2.running_mean".into(), vec![cfg.fc1_units], &bn.bn2_mean));
        list.push(("bn2.running_var".into(), vec![cfg.fc1_units], &bn.bn2_var));
    }
    list
}

/// Serialize parameters to disk, rounding tensors to binary32.
pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let cfg = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        cfg.input_size,
        cfg.num_classes,
        cfg.conv1_channels,
        cfg.conv2_channels,
        cfg.kernel_width,
        cfg.pad(),
        cfg.fc1_units,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match cfg.norm_mode {
        NormMode::Dropout => 0,
        NormMode::BatchNorm => 1,
    });
    out.extend_from_slice(&(cfg.dropout_rate as f32).to_le_bytes());

    let tensors = tensor_list(params);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in tensors {
        push_tensor(&mut out, &name, &dims, data);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load parameters, validating magic, config consistency, and every tensor
/// shape.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        data: &bytes,
        pos: 0,
    };

    let magic = cur.take(8)?;
    if magic != MAGIC {
        if magic[..7] == MAGIC[..7] {
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(magic).into_owned(),
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
            });
        }
        return Err(Error::corrupt("bad magic; not a model file"));
    }

    let input_size = cur.u32()? as usize;
    let num_classes = cur.u32()? as usize;
    let conv1_channels = cur.u32()? as usize;
    let conv2_channels = cur.u32()? as usize;
    let kernel_width = cur.u32()? as usize;
    let pad = cur.u32()? as usize;
    let fc1_units = cur.u32()? as usize;
    let norm_mode = match cur.u8()? {
        0 => NormMode::Dropout,
        1 => NormMode::BatchNorm,
        other => return Err(Error::corrupt(format!("unknown norm mode {other}"))),
    };
    let dropout_rate = cur.f32()? as f64;

    let config = ModelConfig {
        input_size,
        num_classes,
        conv1_channels,
        conv2_channels,
        kernel_width,
        fc1_units,
        norm_mode,
        dropout_rate,
    };
    config
        .validate()
        .map_err(|e| Error::corrupt(format!("invalid stored config: {e}")))?;
    if pad != config.pad() {
        return Err(Error::corrupt(format!(
            "stored pad {pad} inconsistent with kernel width {kernel_width}"
        )));
    }

    let tensor_count = cur.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..tensor_count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::corrupt("tensor name is not UTF-8"))?;
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(Error::corrupt(format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let payload = cur.take(count * 4)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::corrupt(format!("duplicate tensor '{name}'")));
        }
    }
    if !cur.done() {
        return Err(Error::corrupt("trailing bytes after last tensor"));
    }

    let mut take = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let (found_dims, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::corrupt(format!("missing tensor '{name}'")))?;
        if found_dims != dims {
            return Err(Error::shape(format!(
                "tensor '{name}' has dims {found_dims:?}, expected {dims:?}"
            )));
        }
        Ok(data)
    };

    let (c1, c2, kw) = (conv1_channels, conv2_channels, kernel_width);
    let params = ModelParams {
        conv1_w: take("conv1.weight", &[c1, 1, 1, kw])?,
        conv2_w: take("conv2.weight", &[c2, c1, 2, kw])?,
        conv2_b: take("conv2.bias", &[c2])?,
        fc1_w: take("fc1.weight", &[fc1_units, config.flat_len()])?,
        fc1_b: take("fc1.bias", &[fc1_units])?,
        fc2_w: take("fc2.weight", &[num_classes, fc1_units])?,
        fc2_b: take("fc2.bias", &[num_classes])?,
        bn: match norm_mode {
            NormMode::Dropout => None,
            NormMode::BatchNorm => Some(BatchNormParams {
                bn1_gamma: take("bn1.gamma", &[c2])?,
                bn1_beta: take("bn1.beta", &[c2])?,
                bn1_mean: take("bn1.running_mean", &[c2])?,
                bn1_var: take("bn1.running_var", &[c2])?,
                bn2_gamma: take("bn2.gamma", &[fc1_units])?,
                bn2_beta: take("bn2.beta", &[fc1_units])?,
                bn2_mean: take("bn2.running_mean", &[fc1_units])?,
                bn2_var: take("bn2.running_var", &[fc1_units])?,
            }),
        },
        config,
    };
    if !tensors.is_empty() {
        let names: Vec<String> = tensors.keys().cloned().collect();
        return Err(Error::corrupt(format!("unexpected tensors: {names:?}")));
    }
    Ok(params)
}
