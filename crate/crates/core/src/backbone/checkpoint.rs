//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 8            | magic `TRIPQACK`                                     |
//! | 4 (u32)      | format version, currently 1                          |
//! | 8 (u64)      | header length `h`                                    |
//! | h            | UTF-8 JSON `{"backbone": {...}, "meta": {...}}`      |
//! | 4 (u32)      | array count                                          |
//! | per array    | u32 name length, name bytes, u32 rows, u32 cols,     |
//! |              | rows·cols f64 values in row-major order              |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BackboneConfig, ModelParams, Transformer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRIPQACK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub backbone: BackboneConfig,
    /// Free-form metadata (training state, tokenizer, templates).
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Array2<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    meta: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_model(model: &Transformer, meta: serde_json::Value) -> Self {
        Self {
            backbone: model.config.clone(),
            meta,
            arrays: model
                .params
                .tensors()
                .into_iter()
                .map(|(n, _, a)| (n, a.clone()))
                .collect(),
        }
    }

    pub fn array(&self, name: &str) -> Option<&Array2<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Rebuilds the model from the arrays named like [`ModelParams::tensors`].
    pub fn to_model(&self) -> Result<Transformer> {
        let mut params = ModelParams::zeros(&self.backbone);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
        let mut missing = None;
        params.for_each_mut(|i, _, a| match self.array(&names[i]) {
            Some(src) if src.dim() == a.dim() => a.assign(src),
            _ => {
                missing.get_or_insert_with(|| names[i].clone());
            }
        });
        if let Some(name) = missing {
            return Err(bad(format!("array {name} missing or mis-shaped")));
        }
        Transformer::from_parts(self.backbone.clone(), params)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            backbone: self.backbone.clone(),
            meta: self.meta.clone(),
        })?;
        let io = |e: std::io::Error| bad(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, a) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(a.nrows() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(a.ncols() as u32).to_le_bytes()).map_err(io)?;
            let mut buf = Vec::with_capacity(a.len() * 8);
            for v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let io = |e: std::io::Error| bad(format!("truncated checkpoint: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(io)?;
        let header: Header = serde_json::from_slice(&header)?;
        let count = read_u32(&mut r)?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut raw = vec![0u8; rows * cols * 8];
            r.read_exact(&mut raw).map_err(io)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let a = Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))?;
            arrays.push((name, a));
        }
        Ok(Self {
            backbone: header.backbone,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Transformer {
        Transformer::new(
            BackboneConfig {
                layers: 1,
                heads: 2,
                d_model: 4,
                vocab_size: 6,
                max_positions: 8,
                n_adapters: 2,
                lora_rank: 1,
                lora_alpha: 1.0,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let ck = Checkpoint::from_model(&m, serde_json::json!({"step": 4}));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn byte_layout_prefix() {
        let ck = Checkpoint::from_model(&model(), serde_json::Value::Null);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"TRIPQACK");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[20..20 + hlen]).unwrap();
        assert_eq!(header["backbone"]["n_adapters"], 2);
        let count = u32::from_le_bytes(buf[20 + hlen..24 + hlen].try_into().unwrap());
        assert_eq!(count as usize, ck.arrays.len());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::read_from(&b"NOTACKPT...."[..]).is_err());
        let mut buf = Vec::new();
        Checkpoint::from_model(&model(), serde_json::Value::Null)
            .write_to(&mut buf)
            .unwrap();
        buf.truncate(buf.len() - 5);
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn missing_array_is_reported() {
        let mut ck = Checkpoint::from_model(&model(), serde_json::Value::Null);
        ck.arrays.retain(|(n, _)| n != "lm_head");
        let err = ck.to_model().unwrap_err();
        assert!(err.to_string().contains("lm_head"));
    }
}
