//! Binary cube format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "HSIC"
//!      4     4  version (u32 LE) = 1
//!      8     4  height  (u32 LE)
//!     12     4  width   (u32 LE)
//!     16     4  bands   (u32 LE)
//!     20     4  dtype tag (u32 LE), 1 = f32 little-endian
//!     24     8  value range min (f64 LE)
//!     32     8  value range max (f64 LE)
//!     40     …  H·W·B f32 LE values, band-planar, row-major within a band
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{HsiCube, HsiError, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSIC";
pub const CUBE_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 40;

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + cube.data.len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    for v in [CUBE_VERSION, cube.height as u32, cube.width as u32, cube.bands as u32, DTYPE_F32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cube.value_range.0.to_le_bytes());
    out.extend_from_slice(&cube.value_range.1.to_le_bytes());
    for v in &cube.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> HsiError {
    HsiError::Format { offset, message: message.into() }
}

fn read_u32(bytes: &[u8], at: usize, field: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(bytes.len(), format!("file ends before {field}")))
}

fn read_f64(bytes: &[u8], at: usize, field: &str) -> Result<f64> {
    bytes
        .get(at..at + 8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(bytes.len(), format!("file ends before {field}")))
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    match bytes.get(..4) {
        None => return Err(format_err(bytes.len(), "file ends before magic")),
        Some(m) if m != CUBE_MAGIC => return Err(format_err(0, format!("bad magic {m:?}"))),
        _ => {}
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != CUBE_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for (i, name) in ["height", "width", "bands"].iter().enumerate() {
        let v = read_u32(bytes, 8 + 4 * i, name)?;
        if v == 0 {
            return Err(format_err(8 + 4 * i, format!("{name} is zero")));
        }
        dims[i] = v as usize;
    }
    let dtype = read_u32(bytes, 20, "dtype tag")?;
    if dtype != DTYPE_F32 {
        return Err(format_err(20, format!("unknown dtype tag {dtype}")));
    }
    let lo = read_f64(bytes, 24, "value range")?;
    let hi = read_f64(bytes, 32, "value range")?;

    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| format_err(8, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != n * 4 {
        return Err(format_err(
            bytes.len().min(HEADER_LEN + n * 4),
            format!("payload has {} bytes, header implies {}", payload.len(), n * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HsiCube::new(dims[0], dims[1], dims[2], data, (lo, hi))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| HsiError::Io { path: path.to_owned(), source })?;
    decode_cube(&bytes)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_cube(cube))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| HsiError::Io { path: path.to_owned(), source };
    let file_name = path
        .file_name()
        .ok_or_else(|| HsiError::Param(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)
}

/// Plain-text import: a header line `H W B [min max]` followed by H·W·B
/// whitespace-separated values in band-planar order. Lines starting with `#` are skipped.
pub fn import_text(text: &str) -> Result<HsiCube> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| HsiError::Param("empty text cube".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 && fields.len() != 5 {
        return Err(HsiError::Param(format!("header needs `H W B [min max]`, got {header:?}")));
    }
    let dim = |s: &str| {
        s.parse::<usize>().map_err(|e| HsiError::Param(format!("bad dimension {s:?}: {e}")))
    };
    let (h, w, b) = (dim(fields[0])?, dim(fields[1])?, dim(fields[2])?);
    let range = if fields.len() == 5 {
        let f = |s: &str| {
            s.parse::<f64>().map_err(|e| HsiError::Param(format!("bad range {s:?}: {e}")))
        };
        (f(fields[3])?, f(fields[4])?)
    } else {
        (0.0, 1.0)
    };
    let mut data = Vec::with_capacity(h * w * b);
    for (line_no, line) in lines {
        for tok in line.split_whitespace() {
            let v = tok.parse::<f32>().map_err(|e| {
                HsiError::Param(format!("line {}: bad value {tok:?}: {e}", line_no + 1))
            })?;
            data.push(v);
        }
    }
    HsiCube::new(h, w, b, data, range)
}
