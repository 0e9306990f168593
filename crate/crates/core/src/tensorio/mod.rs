//! On-disk formats: NIfTI-1 volumes and the `MCT1` tensor container.

mod blob;
mod nifti;

pub use blob::{decode_blob, encode_blob, read_blob, sidecar_path, write_blob, BlobData, BlobMeta, TensorBlob};
pub use nifti::{decode_nifti, encode_nifti, read_nifti, write_nifti, NIFTI_HEADER_SIZE};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temp file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if path.file_name().is_none() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")));
    }
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}
