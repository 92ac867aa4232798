//! Bit-packed storage of quantized representations.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "L2QB" | version u16 | mode u8 (0 = end, 1 = anl) | d u32 | code layers u32
//!        | num_users u64 | num_items u64 | reserved [u8; 8]
//! codes:  node-major, layer-minor, ceil(d/8) bytes each, LSB-first
//! alphas: (mode 1 only) node-major, layer-minor, f32
//! crc32 of everything above
//! ```

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{ForwardCache, Mode, Rescaling, VariantFlags};

pub const MAGIC: &[u8; 4] = b"L2QB";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 1 + 4 + 4 + 8 + 8 + 8;
pub const TRAILER_BYTES: usize = 4;

/// Bytes needed for `d` one-bit codes.
pub fn packed_len(d: usize) -> usize {
    d.div_ceil(8)
}

/// Packs `+1 -> 1`, `-1 -> 0`, element `j` at bit `j % 8` of byte `j / 8`.
pub fn pack_codes(codes: &[i8]) -> Result<Vec<u8>> {
    let mut out = vec![0u8; packed_len(codes.len())];
    pack_into(codes, &mut out)?;
    Ok(out)
}

fn pack_into(codes: &[i8], out: &mut [u8]) -> Result<()> {
    debug_assert_eq!(out.len(), packed_len(codes.len()));
    out.fill(0);
    for (j, &q) in codes.iter().enumerate() {
        match q {
            1 => out[j / 8] |= 1 << (j % 8),
            -1 => {}
            other => return Err(Error::InvalidCode(other.into())),
        }
    }
    Ok(())
}

/// Inverse of [`pack_codes`]. Set bits past `d` are reported as corruption.
pub fn unpack_codes(bytes: &[u8], d: usize) -> Result<Vec<i8>> {
    let mut out = vec![0i8; d];
    unpack_into(bytes, &mut out)?;
    Ok(out)
}

fn unpack_into(bytes: &[u8], out: &mut [i8]) -> Result<()> {
    let d = out.len();
    if bytes.len() != packed_len(d) {
        return Err(Error::Shape(format!(
            "{} packed bytes for {d} codes, expected {}",
            bytes.len(),
            packed_len(d)
        )));
    }
    if !d.is_multiple_of(8) {
        let unused = !((1u8 << (d % 8)) - 1);
        if bytes[bytes.len() - 1] & unused != 0 {
            return Err(Error::Corrupt(
                "nonzero padding bits after the last code".into(),
            ));
        }
    }
    for (j, q) in out.iter_mut().enumerate() {
        *q = if bytes[j / 8] >> (j % 8) & 1 == 1 {
            1
        } else {
            -1
        };
    }
    Ok(())
}

/// Packed codes for every node and layer, plus per-layer factors when the
/// table was exported from a rescaled model.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTable {
    num_users: usize,
    num_items: usize,
    num_code_layers: usize,
    dim: usize,
    packed: Vec<u8>,
    alphas: Option<Vec<f32>>,
}

impl QuantizedTable {
    /// Packs the codes of every quantized layer of a forward pass: all of
    /// them, or the last one alone without topology-aware quantization.
    /// Rescaling factors (computed or learned) are stored iff
    /// `flags.rescaling` is not `None`.
    pub fn from_cache(
        cache: &ForwardCache,
        flags: &VariantFlags,
        num_users: usize,
    ) -> Result<Self> {
        if !flags.quantization_enabled {
            return Err(Error::Config("export needs quantization enabled".into()));
        }
        let n = cache.num_nodes();
        if num_users > n {
            return Err(Error::OutOfRange {
                index: num_users,
                len: n,
            });
        }
        let kept: Vec<usize> = (0..=cache.num_layers())
            .filter(|&l| flags.layer_is_quantized(l, cache.num_layers()))
            .collect();
        let layers = kept.len();
        let d = cache.code_dim();
        let width = packed_len(d);
        let mut packed = vec![0u8; n * layers * width];
        let mut slots = packed.chunks_exact_mut(width);
        for x in 0..n {
            for &l in &kept {
                let row = cache.codes[l].row(x);
                let slot = slots.next().expect("sized above");
                pack_into(row.as_slice().expect("standard layout"), slot)?;
            }
        }
        let alphas = if flags.rescaling == Rescaling::None {
            None
        } else {
            let mut a = Vec::with_capacity(n * layers);
            for x in 0..n {
                for &l in &kept {
                    let s = cache.layer_scale(flags, l).ok_or_else(|| {
                        Error::Config("learnable rescaling without factors".into())
                    })?;
                    a.push(s[x] as f32);
                }
            }
            Some(a)
        };
        Self::from_parts(num_users, n - num_users, layers, d, packed, alphas)
    }

    /// Validates and assembles a table from raw sections.
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        num_code_layers: usize,
        dim: usize,
        packed: Vec<u8>,
        alphas: Option<Vec<f32>>,
    ) -> Result<Self> {
        if dim == 0 || num_code_layers == 0 {
            return Err(Error::Shape(format!(
                "table needs d >= 1 and at least one code layer, got d = {dim}, layers = {num_code_layers}"
            )));
        }
        let n = num_users + num_items;
        let slots = n * num_code_layers;
        if packed.len() != slots * packed_len(dim) {
            return Err(Error::Shape(format!(
                "{} code bytes, expected {}",
                packed.len(),
                slots * packed_len(dim)
            )));
        }
        if let Some(a) = &alphas {
            if a.len() != slots {
                return Err(Error::Shape(format!(
                    "{} factors, expected {slots}",
                    a.len()
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("rescaling factors".into()));
            }
        }
        let table = Self {
            num_users,
            num_items,
            num_code_layers,
            dim,
            packed,
            alphas,
        };
        if !dim.is_multiple_of(8) {
            let mut scratch = vec![0i8; dim];
            for chunk in table.packed.chunks_exact(packed_len(dim)) {
                unpack_into(chunk, &mut scratch)?;
            }
        }
        Ok(table)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_code_layers(&self) -> usize {
        self.num_code_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        if self.alphas.is_some() {
            Mode::Anl
        } else {
            Mode::End
        }
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.packed
    }

    pub fn alphas(&self) -> Option<&[f32]> {
        self.alphas.as_deref()
    }

    fn check_slot(&self, node: usize, layer: usize) -> Result<usize> {
        if node >= self.num_nodes() {
            return Err(Error::OutOfRange {
                index: node,
                len: self.num_nodes(),
            });
        }
        if layer >= self.num_code_layers {
            return Err(Error::OutOfRange {
                index: layer,
                len: self.num_code_layers,
            });
        }
        Ok(node * self.num_code_layers + layer)
    }

    /// Packed bytes of one node's code at one layer.
    pub fn packed_code(&self, node: usize, layer: usize) -> Result<&[u8]> {
        let slot = self.check_slot(node, layer)?;
        let w = packed_len(self.dim);
        Ok(&self.packed[slot * w..(slot + 1) * w])
    }

    pub fn code(&self, node: usize, layer: usize) -> Result<Vec<i8>> {
        unpack_codes(self.packed_code(node, layer)?, self.dim)
    }

    pub fn alpha(&self, node: usize, layer: usize) -> Result<Option<f32>> {
        let slot = self.check_slot(node, layer)?;
        Ok(self.alphas.as_ref().map(|a| a[slot]))
    }

    /// Code bytes plus factor bytes, excluding header and checksum.
    pub fn payload_bytes(&self) -> usize {
        self.packed.len() + self.alphas.as_ref().map_or(0, |a| a.len() * 4)
    }

    pub fn file_bytes(&self) -> usize {
        HEADER_BYTES + self.payload_bytes() + TRAILER_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.file_bytes());
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u8(u8::from(self.alphas.is_some())).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u32::<LittleEndian>(self.num_code_layers as u32)
            .unwrap();
        out.write_u64::<LittleEndian>(self.num_users as u64)
            .unwrap();
        out.write_u64::<LittleEndian>(self.num_items as u64)
            .unwrap();
        out.extend_from_slice(&[0u8; 8]);
        out.extend_from_slice(&self.packed);
        if let Some(a) = &self.alphas {
            for &x in a {
                out.write_f32::<LittleEndian>(x).unwrap();
            }
        }
        let crc = crc32fast::hash(&out);
        out.write_u32::<LittleEndian>(crc).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES + TRAILER_BYTES {
            return Err(Error::Corrupt(format!(
                "{} bytes is too short for a table",
                bytes.len()
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_BYTES);
        if crc32fast::hash(body) != LittleEndian::read_u32(trailer) {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        if &body[..4] != MAGIC {
            return Err(Error::Corrupt("not a quantized table".into()));
        }
        let mut header = &body[4..HEADER_BYTES];
        let version = header.read_u16::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported format version {version}"
            )));
        }
        let mode = header.read_u8()?;
        let dim = header.read_u32::<LittleEndian>()? as usize;
        let layers = header.read_u32::<LittleEndian>()? as usize;
        let num_users = header.read_u64::<LittleEndian>()? as usize;
        let num_items = header.read_u64::<LittleEndian>()? as usize;
        if mode > 1 {
            return Err(Error::Corrupt(format!("unknown mode byte {mode}")));
        }
        let slots = num_users
            .checked_add(num_items)
            .and_then(|n| n.checked_mul(layers))
            .ok_or_else(|| Error::Corrupt("header sizes overflow".into()))?;
        let code_bytes = slots
            .checked_mul(packed_len(dim))
            .ok_or_else(|| Error::Corrupt("header sizes overflow".into()))?;
        let alpha_bytes = if mode == 1 { slots * 4 } else { 0 };
        let payload = &body[HEADER_BYTES..];
        if payload.len() != code_bytes + alpha_bytes {
            return Err(Error::Corrupt(format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                code_bytes + alpha_bytes
            )));
        }
        let (codes, rest) = payload.split_at(code_bytes);
        let alphas = (mode == 1).then(|| {
            rest.chunks_exact(4)
                .map(LittleEndian::read_f32)
                .collect::<Vec<f32>>()
        });
        Self::from_parts(num_users, num_items, layers, dim, codes.to_vec(), alphas)
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn import(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Packs `cache` and writes it to `path`.
pub fn export(
    cache: &ForwardCache,
    flags: &VariantFlags,
    num_users: usize,
    path: impl AsRef<Path>,
) -> Result<QuantizedTable> {
    let table = QuantizedTable::from_cache(cache, flags, num_users)?;
    table.export(path)?;
    Ok(table)
}

/// Storage cost against one fp32 `N x d` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionReport {
    pub mode: Mode,
    /// Codes plus stored factors.
    pub packed_bytes: usize,
    pub file_bytes: usize,
    pub baseline_fp32_bytes: usize,
    /// `baseline / packed`
    pub measured_ratio: f64,
    /// `baseline / file`
    pub file_ratio: f64,
    pub theory_ratio: f64,
}

/// `32 / (L+1)` for plain codes, `32d / ((L+1)(d+32))` with f32 factors.
pub fn theory_ratio(mode: Mode, num_code_layers: usize, dim: usize) -> f64 {
    let (l, d) = (num_code_layers as f64, dim as f64);
    match mode {
        Mode::End => 32.0 / l,
        Mode::Anl => 32.0 * d / (l * (d + 32.0)),
    }
}

pub fn compression_report(table: &QuantizedTable) -> CompressionReport {
    let baseline = table.num_nodes() * table.dim() * 4;
    let packed = table.payload_bytes();
    let file = table.file_bytes();
    CompressionReport {
        mode: table.mode(),
        packed_bytes: packed,
        file_bytes: file,
        baseline_fp32_bytes: baseline,
        measured_ratio: baseline as f64 / packed as f64,
        file_ratio: baseline as f64 / file as f64,
        theory_ratio: theory_ratio(table.mode(), table.num_code_layers(), table.dim()),
    }
}
