//! Model checkpoints.
//!
//! Layout: `b"CCCK"`, u32 version, u64 header length, a JSON header
//! (`config`, tensor `names`, free-form `extra`), then one tensor record per
//! name in the binary tensor format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conformer::{ConformerConfig, ConformerModel, ParamStore};
use super::tensor::Mat;
use super::NnError;
use crate::tensorio::RawTensor;

const MAGIC: &[u8; 4] = b"CCCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ConformerConfig,
    names: Vec<String>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ConformerModel,
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ConformerModel, extra: &serde_json::Value) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        config: model.config.clone(),
        names: model.params.iter().map(|(n, _)| n.to_string()).collect(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, m) in model.params.iter() {
        RawTensor::new(vec![m.rows, m.cols], m.data.clone())?.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut params = ParamStore::new();
    for name in &header.names {
        let raw = RawTensor::read_from(&mut r)?;
        let (rows, cols) = raw.matrix_shape()?;
        params.insert(name, Mat::from_vec(rows, cols, raw.data))?;
    }
    let model = ConformerModel::from_parts(header.config, params)?;
    Ok(Checkpoint {
        model,
        extra: header.extra,
    })
}
