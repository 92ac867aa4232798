//! Full-precision parameter checkpoints.
//!
//! Layout (little-endian): magic `L2QP` | version u16 | num_layers u32 |
//! num_nodes u64 | embed_dim u32 | code_dim u32 | has_factors u8 |
//! embeddings f64[N*c] | transform f64[c*d] | factors f64[N*(L+1)] | crc32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::ModelParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"L2QP";
const VERSION: u16 = 1;

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u16::<LittleEndian>(VERSION).unwrap();
        buf.write_u32::<LittleEndian>(self.num_layers as u32)
            .unwrap();
        buf.write_u64::<LittleEndian>(self.num_nodes() as u64)
            .unwrap();
        buf.write_u32::<LittleEndian>(self.embed_dim() as u32)
            .unwrap();
        buf.write_u32::<LittleEndian>(self.code_dim() as u32)
            .unwrap();
        buf.write_u8(self.layer_factors.is_some() as u8).unwrap();
        for t in self.tensors() {
            for &x in t.iter() {
                buf.write_f64::<LittleEndian>(x).unwrap();
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.write_u32::<LittleEndian>(crc).unwrap();
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Corrupt("checkpoint too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
        }
        let mut r = body;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("not a model checkpoint".into()));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let num_layers = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let has_factors = r.read_u8()? != 0;
        let expected = 8 * (n * c + c * d + if has_factors { n * (num_layers + 1) } else { 0 });
        if r.len() != expected {
            return Err(Error::Corrupt(format!(
                "checkpoint payload is {} bytes, expected {expected}",
                r.len()
            )));
        }
        let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<f64>> {
            let mut data = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
        };
        let embeddings = read_matrix(n, c)?;
        let transform = read_matrix(c, d)?;
        let factors = if has_factors {
            Some(read_matrix(n, num_layers + 1)?)
        } else {
            None
        };
        ModelParams::new(embeddings, transform, num_layers, factors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.to_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
