//! NIfTI-1 single-file (`n+1`) and header/image pair (`ni1`) reader, plus a
//! float32 single-file writer. Little-endian only; `.gz` is handled
//! transparently on both sides.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{atomic_write, is_gzip_path, read_file};
use crate::error::{Error, Result};
use crate::volume::{diag_affine, Affine, Volume, IDENTITY};

pub const NIFTI_HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

// byte offsets into the 348-byte header
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_DESCRIP: usize = 148;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_QUATERN: usize = 256;
const OFF_QOFFSET: usize = 268;
const OFF_SROW: usize = 280;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    SingleFile,
    Pair,
}

struct Header {
    dims: [usize; 3],
    datatype: i16,
    pixdim: [f32; 8],
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 3],
    qoffset: [f32; 3],
    srow: [[f32; 4]; 3],
    layout: Layout,
}

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn dtype_size(code: i16) -> Result<usize> {
    match code {
        DT_UINT8 => Ok(1),
        DT_INT16 => Ok(2),
        DT_INT32 | DT_FLOAT32 => Ok(4),
        DT_FLOAT64 => Ok(8),
        other => Err(Error::UnsupportedDtype(other.into())),
    }
}

fn parse_header(b: &[u8]) -> Result<Header> {
    if b.len() < NIFTI_HEADER_SIZE {
        return Err(Error::TruncatedPayload { needed: NIFTI_HEADER_SIZE as u64, available: b.len() as u64 });
    }
    let sizeof_hdr = le_i32(b, 0);
    if sizeof_hdr != NIFTI_HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == NIFTI_HEADER_SIZE as i32 {
            return Err(Error::InvalidHeader("big-endian NIfTI files are not supported".into()));
        }
        return Err(Error::InvalidHeader(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let layout = match &b[OFF_MAGIC..OFF_MAGIC + 4] {
        b"n+1\0" => Layout::SingleFile,
        b"ni1\0" => Layout::Pair,
        other => return Err(Error::BadMagic(format!("{:?}", String::from_utf8_lossy(other)))),
    };

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = le_i16(b, OFF_DIM + 2 * i);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::InvalidHeader(format!("dim[0] = {ndim} (big-endian or corrupt header)")));
    }
    let ndim = ndim as usize;
    let mut dims = [1usize; 3];
    for axis in 1..=ndim {
        let d = dim[axis];
        if d < 1 {
            return Err(Error::InvalidHeader(format!("dim[{axis}] = {d}")));
        }
        if axis <= 3 {
            dims[axis - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::InvalidHeader(format!(
                "only 3D volumes are supported (dim[{axis}] = {d}); split 4D series per phase"
            )));
        }
    }

    let datatype = le_i16(b, OFF_DATATYPE);
    let size = dtype_size(datatype)?;
    let bitpix = le_i16(b, OFF_BITPIX);
    if bitpix as usize != size * 8 {
        return Err(Error::InvalidHeader(format!("bitpix {bitpix} does not match datatype {datatype}")));
    }

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = le_f32(b, OFF_PIXDIM + 4 * i);
    }

    let raw_offset = le_f32(b, OFF_VOX_OFFSET);
    if !raw_offset.is_finite() || raw_offset < 0.0 || raw_offset.fract() != 0.0 || raw_offset > 1e9 {
        return Err(Error::InvalidHeader(format!("vox_offset {raw_offset}")));
    }
    let vox_offset = raw_offset as usize;
    if layout == Layout::SingleFile && vox_offset < SINGLE_FILE_OFFSET {
        return Err(Error::InvalidHeader(format!("vox_offset {vox_offset} < 352 in a single-file image")));
    }

    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = le_f32(b, OFF_SROW + 16 * r + 4 * c);
        }
    }

    Ok(Header {
        dims,
        datatype,
        pixdim,
        vox_offset,
        scl_slope: le_f32(b, OFF_SCL_SLOPE),
        scl_inter: le_f32(b, OFF_SCL_INTER),
        qform_code: le_i16(b, OFF_QFORM_CODE),
        sform_code: le_i16(b, OFF_SFORM_CODE),
        quatern: [le_f32(b, OFF_QUATERN), le_f32(b, OFF_QUATERN + 4), le_f32(b, OFF_QUATERN + 8)],
        qoffset: [le_f32(b, OFF_QOFFSET), le_f32(b, OFF_QOFFSET + 4), le_f32(b, OFF_QOFFSET + 8)],
        srow,
        layout,
    })
}

impl Header {
    fn spacing(&self) -> Result<[f64; 3]> {
        let mut s = [1.0; 3];
        for (i, v) in s.iter_mut().enumerate() {
            let p = f64::from(self.pixdim[i + 1]).abs();
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidHeader(format!("pixdim[{}] = {}", i + 1, self.pixdim[i + 1])));
            }
            *v = p;
        }
        Ok(s)
    }

    fn affine(&self, spacing: [f64; 3]) -> Affine {
        if self.sform_code > 0 {
            let mut a = IDENTITY;
            for (r, row) in self.srow.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    a[r][c] = f64::from(*v);
                }
            }
            a
        } else if self.qform_code > 0 {
            self.qform_affine(spacing)
        } else {
            diag_affine(spacing)
        }
    }

    fn qform_affine(&self, spacing: [f64; 3]) -> Affine {
        let [b, c, d] = self.quatern.map(f64::from);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [spacing[0], spacing[1], spacing[2] * qfac];
        let mut out = IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = r[i][j] * scale[j];
            }
            out[i][3] = f64::from(self.qoffset[i]);
        }
        out
    }

    fn payload_bytes(&self) -> Result<u64> {
        let n = self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        n.and_then(|n| n.checked_mul(dtype_size(self.datatype).ok()? as u64))
            .ok_or_else(|| Error::InvalidHeader("dimensions overflow".into()))
    }
}

fn convert(raw: &[u8], datatype: i16, slope: f32, inter: f32) -> Vec<f32> {
    let mut out: Vec<f32> = match datatype {
        DT_UINT8 => raw.iter().map(|&v| f32::from(v)).collect(),
        DT_INT16 => raw.chunks_exact(2).map(|c| f32::from(i16::from_le_bytes([c[0], c[1]]))).collect(),
        DT_INT32 => raw.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f32).collect(),
        DT_FLOAT32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        DT_FLOAT64 => {
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")) as f32).collect()
        }
        _ => unreachable!("datatype validated while parsing the header"),
    };
    // scl_slope == 0 means the values are stored unscaled.
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    if scaled {
        let (s, i) = (f64::from(slope), if inter.is_finite() { f64::from(inter) } else { 0.0 });
        if datatype == DT_FLOAT64 {
            let raw64 = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
            for (o, r) in out.iter_mut().zip(raw64) {
                *o = (s * r + i) as f32;
            }
        } else {
            for o in out.iter_mut() {
                *o = (s * f64::from(*o) + i) as f32;
            }
        }
    }
    out
}

/// Decodes an in-memory NIfTI-1 image. `pair_image` carries the `.img`
/// payload when the header has the `ni1` magic.
pub fn decode_nifti(bytes: &[u8], pair_image: Option<&[u8]>) -> Result<Volume> {
    let header = parse_header(bytes)?;
    let needed = header.payload_bytes()?;
    let source = match header.layout {
        Layout::SingleFile => bytes,
        Layout::Pair => {
            pair_image.ok_or_else(|| Error::InvalidHeader("ni1 header without its .img companion".into()))?
        }
    };
    let start = header.vox_offset as u64;
    let end = start.checked_add(needed).ok_or_else(|| Error::InvalidHeader("payload extent overflows".into()))?;
    if (source.len() as u64) < end {
        return Err(Error::TruncatedPayload { needed: end, available: source.len() as u64 });
    }
    let raw = &source[start as usize..end as usize];
    let spacing = header.spacing()?;
    let affine = header.affine(spacing);
    let data = convert(raw, header.datatype, header.scl_slope, header.scl_inter);
    Volume::new(header.dims, spacing, affine, data)
}

fn load_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = load_maybe_gz(path)?;
    if bytes.len() >= OFF_MAGIC + 4 && &bytes[OFF_MAGIC..OFF_MAGIC + 4] == b"ni1\0" {
        let img = pair_image_path(path);
        let payload = load_maybe_gz(&img)?;
        return decode_nifti(&bytes, Some(&payload));
    }
    decode_nifti(&bytes, None)
}

fn pair_image_path(hdr: &Path) -> std::path::PathBuf {
    let name = hdr.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let img = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        format!("{name}.img")
    };
    hdr.with_file_name(img)
}

/// Single-file float32 encoding with the affine stored as the sform.
#[allow(clippy::needless_range_loop)]
pub fn encode_nifti(v: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; SINGLE_FILE_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, x: i16| h[off..off + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, x: f32| h[off..off + 4].copy_from_slice(&x.to_le_bytes());

    h[0..4].copy_from_slice(&(NIFTI_HEADER_SIZE as i32).to_le_bytes());
    let dims = v.dims();
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for i in 0..3 {
        dim[i + 1] = i16::try_from(dims[i]).expect("NIfTI-1 dims are limited to i16");
    }
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut h, OFF_DIM + 2 * i, *d);
    }
    put_i16(&mut h, OFF_DATATYPE, DT_FLOAT32);
    put_i16(&mut h, OFF_BITPIX, 32);
    let spacing = v.spacing();
    put_f32(&mut h, OFF_PIXDIM, 1.0);
    for i in 0..3 {
        put_f32(&mut h, OFF_PIXDIM + 4 * (i + 1), spacing[i] as f32);
    }
    put_f32(&mut h, OFF_VOX_OFFSET, SINGLE_FILE_OFFSET as f32);
    put_f32(&mut h, OFF_SCL_SLOPE, 0.0);
    put_f32(&mut h, OFF_SCL_INTER, 0.0);
    h[OFF_XYZT_UNITS] = 2; // mm
    let descrip = b"mipcls";
    h[OFF_DESCRIP..OFF_DESCRIP + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut h, OFF_QFORM_CODE, 0);
    put_i16(&mut h, OFF_SFORM_CODE, 2);
    let a = v.affine();
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, OFF_SROW + 16 * r + 4 * c, a[r][c] as f32);
        }
    }
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");

    h.reserve(v.len() * 4);
    for x in v.data() {
        h.extend_from_slice(&x.to_le_bytes());
    }
    h
}

/// Writes `v` as float32 NIfTI-1; a `.gz` suffix selects gzip compression.
pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(v);
    if is_gzip_path(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        let gz = enc.finish().map_err(|e| Error::io(path, e))?;
        atomic_write(path, &gz)
    } else {
        atomic_write(path, &bytes)
    }
}
