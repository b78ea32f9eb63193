//! Reader and writer for the single-file NIfTI-1 format (`.nii`, `.nii.gz`).
//!
//! Only the fields needed to recover a scalar volume are interpreted:
//! dimensions, spacing, datatype, intensity scaling and the data offset.
//! Orientation (qform/sform) is ignored and volumes are kept in stored axis
//! order, which for NIfTI is `x` fastest, i.e. `(z, y, x)` in this crate.

use crate::volume::{Volume3D, VolumeError};
use flate2::read::GzDecoder;
use std::io::Read;
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const MIN_FILE_SIZE: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";
const MAGIC_OFFSET: usize = 344;

#[derive(Debug, Error, PartialEq)]
pub enum NiftiError {
    #[error("file has {0} bytes, need at least {MIN_FILE_SIZE}")]
    TooShort(usize),
    #[error("sizeof_hdr is not 348 in either byte order")]
    BadHeaderSize,
    #[error("magic is not \"n+1\\0\"")]
    BadMagic,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid dimensions {0:?}")]
    InvalidDims(Vec<i16>),
    #[error("invalid spacing {0:?}")]
    InvalidSpacing(Vec<f32>),
    #[error("invalid vox_offset {0}")]
    InvalidVoxOffset(f32),
    #[error("data needs {expected} bytes, file has {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("header dims {header:?} do not match volume dims {volume:?}")]
    DimMismatch { header: Vec<usize>, volume: Vec<usize> },
    #[error("gzip stream: {0}")]
    Gzip(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

/// Interpreted subset of a NIfTI-1 header. `dims` and `pixdim` are in file
/// order `(x, y, z[, t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dims: Vec<usize>,
    pub pixdim: Vec<f32>,
    pub datatype: Datatype,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub vox_offset: f32,
    pub endianness: Endianness,
}

impl NiftiHeader {
    /// Float32, little-endian header describing `vol`.
    pub fn for_volume(vol: &Volume3D) -> Self {
        let d = vol.dims();
        let s = vol.spacing();
        Self {
            dims: vec![d[2], d[1], d[0]],
            pixdim: vec![s[2] as f32, s[1] as f32, s[0] as f32],
            datatype: Datatype::Float32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            vox_offset: MIN_FILE_SIZE as f32,
            endianness: Endianness::Little,
        }
    }

    fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    fn effective_slope(&self) -> f32 {
        if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            1.0
        } else {
            self.scl_slope
        }
    }

    fn effective_inter(&self) -> f32 {
        if self.scl_inter.is_finite() {
            self.scl_inter
        } else {
            0.0
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    endian: Endianness,
}

impl Cursor<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[at..at + N]);
        a
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endianness::Little => i16::from_le_bytes(self.arr(at)),
            Endianness::Big => i16::from_be_bytes(self.arr(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endianness::Little => f32::from_le_bytes(self.arr(at)),
            Endianness::Big => f32::from_be_bytes(self.arr(at)),
        }
    }

    fn f64(&self, at: usize) -> f64 {
        match self.endian {
            Endianness::Little => f64::from_le_bytes(self.arr(at)),
            Endianness::Big => f64::from_be_bytes(self.arr(at)),
        }
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, NiftiError> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| NiftiError::Gzip(e.to_string()))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parses the header of an uncompressed NIfTI-1 byte buffer.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < MIN_FILE_SIZE {
        return Err(NiftiError::TooShort(bytes.len()));
    }
    let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Endianness::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Endianness::Big
    } else {
        return Err(NiftiError::BadHeaderSize);
    };
    if &bytes[MAGIC_OFFSET..MAGIC_OFFSET + 4] != MAGIC {
        return Err(NiftiError::BadMagic);
    }
    let c = Cursor { bytes, endian };
    let dim: Vec<i16> = (0..8).map(|i| c.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=4).contains(&ndim) || dim[1..=ndim as usize].iter().any(|&d| d < 1) {
        return Err(NiftiError::InvalidDims(dim));
    }
    let n = ndim as usize;
    let mut dims: Vec<usize> = dim[1..=n].iter().map(|&d| d as usize).collect();
    let mut pixdim: Vec<f32> = (1..=n).map(|i| c.f32(76 + 4 * i)).collect();
    while dims.len() < 3 {
        dims.push(1);
        pixdim.push(1.0);
    }
    if pixdim.iter().take(3).any(|&p| !(p.is_finite() && p > 0.0)) {
        return Err(NiftiError::InvalidSpacing(pixdim));
    }
    let code = c.i16(70);
    let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;
    let vox_offset = c.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= MIN_FILE_SIZE as f32 && vox_offset.fract() == 0.0)
    {
        return Err(NiftiError::InvalidVoxOffset(vox_offset));
    }
    Ok(NiftiHeader {
        dims,
        pixdim,
        datatype,
        scl_slope: c.f32(112),
        scl_inter: c.f32(116),
        vox_offset,
        endianness: endian,
    })
}

/// Decodes a NIfTI-1 file (optionally gzip-compressed) into its header and
/// a float volume holding `slope * raw + inter`. For 4D files only the first
/// frame is returned, but the full payload must be present.
pub fn read_nifti(bytes: &[u8]) -> Result<(NiftiHeader, Volume3D), NiftiError> {
    let bytes = maybe_gunzip(bytes)?;
    let header = parse_header(&bytes)?;
    let elem = header.datatype.size();
    let count = header.voxel_count();
    let start = header.vox_offset as usize;
    let expected = count
        .checked_mul(elem)
        .and_then(|n| n.checked_add(start))
        .ok_or(NiftiError::TruncatedData {
            expected: usize::MAX,
            actual: bytes.len(),
        })?;
    if bytes.len() < expected {
        return Err(NiftiError::TruncatedData {
            expected,
            actual: bytes.len(),
        });
    }
    let frame = header.dims[0] * header.dims[1] * header.dims[2];
    let c = Cursor {
        bytes: &bytes,
        endian: header.endianness,
    };
    let slope = header.effective_slope();
    let inter = header.effective_inter();
    let data: Vec<f32> = (0..frame)
        .map(|i| {
            let at = start + i * elem;
            let raw = match header.datatype {
                Datatype::Uint8 => bytes[at] as f32,
                Datatype::Int16 => c.i16(at) as f32,
                Datatype::Float32 => c.f32(at),
                Datatype::Float64 => c.f64(at) as f32,
            };
            if slope == 1.0 && inter == 0.0 {
                raw
            } else {
                slope * raw + inter
            }
        })
        .collect();
    let dims = [header.dims[2], header.dims[1], header.dims[0]];
    let spacing = [
        header.pixdim[2] as f64,
        header.pixdim[1] as f64,
        header.pixdim[0] as f64,
    ];
    let vol = Volume3D::new(dims, spacing, data)?;
    Ok((header, vol))
}

fn put<const N: usize>(buf: &mut [u8], at: usize, le: [u8; N], be: [u8; N], e: Endianness) {
    buf[at..at + N].copy_from_slice(match e {
        Endianness::Little => &le,
        Endianness::Big => &be,
    });
}

/// Encodes `vol` using the datatype, scaling and byte order of `header`.
/// Integer datatypes store `round((v - inter) / slope)` saturated to range.
pub fn write_nifti(header: &NiftiHeader, vol: &Volume3D) -> Result<Vec<u8>, NiftiError> {
    let d = vol.dims();
    let mut hdims = header.dims.clone();
    while hdims.len() > 3 && hdims.last() == Some(&1) {
        hdims.pop();
    }
    let vdims = vec![d[2], d[1], d[0]];
    if hdims != vdims {
        return Err(NiftiError::DimMismatch {
            header: header.dims.clone(),
            volume: vdims,
        });
    }
    let e = header.endianness;
    let start = (header.vox_offset.max(MIN_FILE_SIZE as f32)) as usize;
    let elem = header.datatype.size();
    let mut buf = vec![0u8; start + vol.len() * elem];

    put(&mut buf, 0, (HEADER_SIZE as i32).to_le_bytes(), (HEADER_SIZE as i32).to_be_bytes(), e);
    buf[38] = b'r';
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for (i, &v) in vdims.iter().enumerate() {
        dim[i + 1] = v as i16;
    }
    for (i, v) in dim.iter().enumerate() {
        put(&mut buf, 40 + 2 * i, v.to_le_bytes(), v.to_be_bytes(), e);
    }
    let code = header.datatype.code();
    put(&mut buf, 70, code.to_le_bytes(), code.to_be_bytes(), e);
    let bitpix = (elem * 8) as i16;
    put(&mut buf, 72, bitpix.to_le_bytes(), bitpix.to_be_bytes(), e);
    let s = vol.spacing();
    let pixdim = [1.0f32, s[2] as f32, s[1] as f32, s[0] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, v) in pixdim.iter().enumerate() {
        put(&mut buf, 76 + 4 * i, v.to_le_bytes(), v.to_be_bytes(), e);
    }
    let off = start as f32;
    put(&mut buf, 108, off.to_le_bytes(), off.to_be_bytes(), e);
    let slope = header.effective_slope();
    let inter = header.effective_inter();
    put(&mut buf, 112, slope.to_le_bytes(), slope.to_be_bytes(), e);
    put(&mut buf, 116, inter.to_le_bytes(), inter.to_be_bytes(), e);
    // xyzt_units: mm
    buf[123] = 2;
    buf[MAGIC_OFFSET..MAGIC_OFFSET + 4].copy_from_slice(MAGIC);

    let identity = slope == 1.0 && inter == 0.0;
    for (i, &v) in vol.data().iter().enumerate() {
        let at = start + i * elem;
        let raw = if identity { v } else { (v - inter) / slope };
        match header.datatype {
            Datatype::Uint8 => buf[at] = raw.round().clamp(0.0, 255.0) as u8,
            Datatype::Int16 => {
                let r = raw.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                put(&mut buf, at, r.to_le_bytes(), r.to_be_bytes(), e);
            }
            Datatype::Float32 => put(&mut buf, at, raw.to_le_bytes(), raw.to_be_bytes(), e),
            Datatype::Float64 => {
                let r = raw as f64;
                put(&mut buf, at, r.to_le_bytes(), r.to_be_bytes(), e);
            }
        }
    }
    Ok(buf)
}

/// Float32 little-endian encoding with unit scaling.
pub fn encode_volume(vol: &Volume3D) -> Vec<u8> {
    write_nifti(&NiftiHeader::for_volume(vol), vol).expect("header built from volume")
}

pub fn read_nifti_file(path: &std::path::Path) -> Result<(NiftiHeader, Volume3D), NiftiError> {
    let bytes = std::fs::read(path).map_err(|e| NiftiError::Io(format!("{}: {e}", path.display())))?;
    read_nifti(&bytes)
}
