//! Model checkpoint container.
//!
//! ```text
//! magic       b"HRSN"
//! version     u32 (= 1)
//! header_len  u32
//! header      JSON: { format_version, dtype, part_shape, config, seed,
//!                     tensors: [{name, shape, decay}], training }
//! payload     every tensor in header order, row-major, f64 little-endian
//! ```
//!
//! Tensor keys are `<part>.conv<1-4>.{weight,bias}`, `<part>.fc.{weight,bias}`
//! for parts `head`, `torso`, `leg`, then `classifier.{weight,bias}`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::model::{init_model, ScbConfig, SiameseModel, TensorSpec};
use super::train::TrainReport;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"HRSN";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    part_shape: [usize; 3],
    config: ScbConfig,
    seed: u64,
    tensors: Vec<TensorSpec>,
    training: Option<TrainReport>,
}

impl<T: Scalar> SiameseModel<T> {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format_version: VERSION,
            dtype: T::DTYPE.into(),
            part_shape: self.part_shape,
            config: self.config,
            seed: self.seed,
            tensors: self.layout.clone(),
            training: self.training.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(json.len() as u32)?;
        w.write_all(&json)?;
        for t in self.weights.tensors() {
            for v in t {
                w.write_f64::<LE>(v.f64())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let len = r.read_u32::<LE>()? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut model = init_model::<T>(header.part_shape, header.config, header.seed)?;
        if model.layout != header.tensors {
            return Err(Error::format(
                "checkpoint",
                "tensor index does not match the configured architecture",
            ));
        }
        for t in model.weights.tensors_mut() {
            for v in t.iter_mut() {
                *v = T::of(r.read_f64::<LE>()?);
            }
        }
        model.training = header.training;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&bytes[..])
    }
}
