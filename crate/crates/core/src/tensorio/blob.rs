//! `MCT1` container: 4-byte magic, u8 dtype, u8 ndim, ndim little-endian
//! u32 dims, then the row-major payload. Metadata lives in a JSON sidecar
//! next to the blob (`<stem>.json`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_file};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MCT1";
const DTYPE_F32: u8 = 1;
const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl BlobData {
    fn code(&self) -> u8 {
        match self {
            BlobData::F32(_) => DTYPE_F32,
            BlobData::U8(_) => DTYPE_U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            BlobData::F32(v) => Some(v),
            BlobData::U8(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlobMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_names: Vec<String>,
    #[serde(default)]
    pub normalized: bool,
    /// Anything else a producer wants to record.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub dims: Vec<u32>,
    pub data: BlobData,
    pub meta: BlobMeta,
}

impl TensorBlob {
    pub fn f32(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let blob = Self { dims, data: BlobData::F32(data), meta: BlobMeta::default() };
        blob.check_len()?;
        Ok(blob)
    }

    pub fn with_meta(mut self, meta: BlobMeta) -> Self {
        self.meta = meta;
        self
    }

    fn element_count(&self) -> Result<u64> {
        self.dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)))
            .ok_or_else(|| Error::InvalidHeader("blob dims overflow".into()))
    }

    fn check_len(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > usize::from(u8::MAX) {
            return Err(Error::InvalidHeader(format!("blob ndim {}", self.dims.len())));
        }
        let expected = self.element_count()?;
        if expected != self.data.len() as u64 {
            return Err(Error::LengthMismatch { expected, found: self.data.len() as u64 });
        }
        Ok(())
    }
}

pub fn encode_blob(blob: &TensorBlob) -> Result<Vec<u8>> {
    blob.check_len()?;
    let mut out = Vec::with_capacity(6 + 4 * blob.dims.len() + 4 * blob.data.len());
    out.extend_from_slice(MAGIC);
    out.push(blob.data.code());
    out.push(blob.dims.len() as u8);
    for d in &blob.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &blob.data {
        BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        BlobData::U8(v) => out.extend_from_slice(v),
    }
    Ok(out)
}

/// Decodes the binary part only; metadata is left at its default.
pub fn decode_blob(bytes: &[u8]) -> Result<TensorBlob> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic("expected MCT1".into()));
    }
    let dtype = bytes[4];
    let elem = match dtype {
        DTYPE_F32 => 4u64,
        DTYPE_U8 => 1,
        other => return Err(Error::UnsupportedDtype(other.into())),
    };
    let ndim = usize::from(bytes[5]);
    if ndim == 0 {
        return Err(Error::InvalidHeader("blob ndim 0".into()));
    }
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::TruncatedPayload { needed: header as u64, available: bytes.len() as u64 });
    }
    let dims: Vec<u32> =
        bytes[6..header].chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)))
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| Error::InvalidHeader("blob dims overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() as u64 != count {
        return Err(Error::LengthMismatch { expected: count, found: payload.len() as u64 });
    }
    let data = match dtype {
        DTYPE_F32 => {
            BlobData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
        _ => BlobData::U8(payload.to_vec()),
    };
    Ok(TensorBlob { dims, data, meta: BlobMeta::default() })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_blob(blob: &TensorBlob, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_blob(blob)?;
    atomic_write(path, &bytes)?;
    let mut meta = serde_json::to_vec_pretty(&blob.meta)?;
    meta.push(b'\n');
    atomic_write(&sidecar_path(path), &meta)
}

/// Reads a blob and, when present, its sidecar metadata.
pub fn read_blob(path: impl AsRef<Path>) -> Result<TensorBlob> {
    let path = path.as_ref();
    let mut blob = decode_blob(&read_file(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        blob.meta = serde_json::from_slice(&read_file(&side)?)?;
    }
    Ok(blob)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_stack_with_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p1_left.mct");
        let data: Vec<f32> = (0..4 * 256 * 256).map(|i| (i as f32).sin() * 1e3).collect();
        let mut meta = BlobMeta {
            patient_id: Some("p1".into()),
            side: Some("left".into()),
            channel_names: vec!["post1".into(), "sub1".into(), "sub2".into(), "sub_last".into()],
            normalized: true,
            ..Default::default()
        };
        meta.extra.insert("window_start".into(), 44.into());
        let blob = TensorBlob::f32(vec![4, 256, 256], data.clone()).unwrap().with_meta(meta);
        write_blob(&blob, &path).unwrap();
        let back = read_blob(&path).unwrap();
        assert_eq!(back, blob);
        let back_bits: Vec<u32> = back.data.as_f32().unwrap().iter().map(|x| x.to_bits()).collect();
        let bits: Vec<u32> = data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(back_bits, bits);
        assert!(dir.path().join("p1_left.json").exists());
    }

    #[test]
    fn u8_round_trip() {
        let blob =
            TensorBlob { dims: vec![3, 2], data: BlobData::U8(vec![0, 1, 2, 3, 4, 255]), meta: BlobMeta::default() };
        assert_eq!(decode_blob(&encode_blob(&blob).unwrap()).unwrap(), blob);
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let blob = TensorBlob::f32(vec![2, 2], vec![1.0; 4]).unwrap();
        let bytes = encode_blob(&blob).unwrap();
        assert!(matches!(decode_blob(&bytes[..bytes.len() - 1]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(TensorBlob::f32(vec![2, 2], vec![1.0; 3]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let blob = TensorBlob::f32(vec![1], vec![1.0]).unwrap();
        let mut bytes = encode_blob(&blob).unwrap();
        bytes[4] = 99;
        assert!(matches!(decode_blob(&bytes), Err(Error::UnsupportedDtype(99))));
        bytes[0] = b'X';
        assert!(matches!(decode_blob(&bytes), Err(Error::BadMagic(_))));
    }
}
