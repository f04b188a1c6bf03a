//! Binary embedding sidecar (`MTEB`, little-endian).
//!
//! Layout: magic, u32 version, u32 dim, u64 count, then `count` records of
//! `u32 camera_id, u32 instance_id, dim x f32 appearance, dim x f32 surrounding`.

use std::path::Path;

use super::{EmbeddingPair, EmbeddingTable, Scene};
use crate::error::{Error, Result};

pub const SIDECAR_MAGIC: &[u8; 4] = b"MTEB";
pub const SIDECAR_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Encodes `table` in ascending (camera_id, instance_id) order.
///
/// Instance ids must fit in a `u32`; negative ids (unmatched detections)
/// cannot be represented.
pub fn encode_embeddings(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let dim = table.dim();
    let dim_u32 = u32::try_from(dim)
        .map_err(|_| Error::Sidecar(format!("dim {dim} does not fit in u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + table.len() * (8 + 8 * dim));
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32.to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for (&(camera_id, instance_id), pair) in table.iter() {
        let iid = u32::try_from(instance_id).map_err(|_| {
            Error::Sidecar(format!(
                "instance id {instance_id} (camera {camera_id}) is not representable as u32"
            ))
        })?;
        out.extend_from_slice(&camera_id.to_le_bytes());
        out.extend_from_slice(&iid.to_le_bytes());
        for v in pair.appearance.iter().chain(&pair.surrounding) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Sidecar(format!(
                "truncated file: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decodes a sidecar without checking keys against a scene.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != SIDECAR_MAGIC {
        return Err(Error::Sidecar(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != SIDECAR_VERSION {
        return Err(Error::Sidecar(format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::Sidecar("dim is 0".into()));
    }
    let count = r.u64()?;
    let record_len = 8 + 8 * dim as u64;
    let remaining = (bytes.len() - r.pos) as u64;
    if count.checked_mul(record_len) != Some(remaining) {
        return Err(Error::Sidecar(format!(
            "truncated or oversized file: {count} records of {record_len} bytes, {remaining} bytes present"
        )));
    }
    let mut table = EmbeddingTable::new(dim)?;
    for _ in 0..count {
        let camera_id = r.u32()?;
        let instance_id = r.u32()? as i64;
        let appearance = r.f32s(dim)?;
        let surrounding = r.f32s(dim)?;
        if table.get(camera_id, instance_id).is_some() {
            return Err(Error::Sidecar(format!(
                "duplicate record for camera {camera_id}, instance {instance_id}"
            )));
        }
        table
            .insert(
                camera_id,
                instance_id,
                EmbeddingPair {
                    appearance,
                    surrounding,
                },
            )
            .map_err(|e| Error::Sidecar(e.to_string()))?;
    }
    Ok(table)
}

/// Reads a sidecar and checks that every key resolves to an instance of `scene`.
pub fn load_embeddings(path: impl AsRef<Path>, scene: &Scene) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = decode_embeddings(&bytes)?;
    table.check_against(scene)?;
    Ok(table)
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(table)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
