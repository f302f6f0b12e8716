//! Binary feature files: a little-endian header (`MGFN`, then u32 version,
//! N, P, C) followed by `N*P*C` f32 values, N outermost and C innermost.
//! Mask files hold one byte (0 or 1) per frame.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"MGFN";
const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<[usize; 3]> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, "truncated header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    Ok([
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    ])
}

/// Reads only the `(N, P, C)` header.
pub fn read_feature_header(path: &Path) -> Result<[usize; 3]> {
    let mut bytes = [0u8; HEADER_LEN];
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut read = 0;
    while read < HEADER_LEN {
        let n = file.read(&mut bytes[read..]).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        read += n;
    }
    parse_header(path, &bytes[..read])
}

/// Loads a feature file as an `[N, P, C]` tensor.
pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let [n, p, c] = parse_header(path, &bytes)?;
    let count = n * p * c;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(format_err(
            path,
            format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                count * 4
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Tensor::new(&[n, p, c], data).map_err(|e| format_err(path, e.to_string()))
}

/// Writes an `[N, P, C]` tensor, quantizing to f32.
pub fn write_features(path: &Path, snippets: &Tensor) -> Result<()> {
    let &[n, p, c] = snippets.shape() else {
        return Err(format_err(
            path,
            format!("expected [N, P, C], got {:?}", snippets.shape()),
        ));
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, n as u32, p as u32, c as u32] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&header).map_err(io_err(path))?;
    for &v in snippets.data() {
        out.write_all(&(v as f32).to_le_bytes())
            .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_mask(path: &Path, frame_count: usize) -> Result<Vec<bool>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != frame_count {
        return Err(format_err(
            path,
            format!("mask has {} frames, expected {frame_count}", bytes.len()),
        ));
    }
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format_err(path, format!("mask byte {other} is not 0 or 1"))),
        })
        .collect()
}

pub fn write_mask(path: &Path, mask: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| u8::from(m)).collect();
    fs::write(path, bytes).map_err(io_err(path))
}
