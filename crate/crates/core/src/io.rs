//! Token container files and PGM mask images.
//!
//! Token container layout (all little-endian):
//!
//! ```text
//! offset 0   b"TKB1"
//! offset 4   rows  u32
//! offset 8   cols  u32
//! offset 12  rows*cols f32, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{DecodeError, Error, Result};
use crate::types::{BinaryMask, PatchGrid, TokenMatrix};

pub const MAGIC: [u8; 4] = *b"TKB1";
pub const HEADER_LEN: usize = 12;

pub fn encode_tokens(m: &TokenMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Param("too many rows for TKB1".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Param("too many cols for TKB1".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenMatrix> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(DecodeError::Magic { found }.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Size {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let (rows, cols) = (word(4) as u64, word(8) as u64);
    if cols == 0 {
        return Err(DecodeError::ZeroCols.into());
    }
    let expected = HEADER_LEN as u64 + 4 * rows * cols;
    if bytes.len() as u64 != expected {
        return Err(DecodeError::Size {
            expected,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let mut data = Vec::with_capacity((rows * cols) as usize);
    for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(DecodeError::NonFinite { index }.into());
        }
        data.push(v);
    }
    TokenMatrix::new(rows as usize, cols as usize, data)
}

pub fn write_tokens(m: &TokenMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tokens(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<TokenMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tokens(&bytes)
}

/// Binary PGM (P5, maxval 255): set cells 255, unset 0.
pub fn encode_mask_pgm(mask: &BinaryMask) -> Result<Vec<u8>> {
    let g = mask.grid();
    if g.views != 1 {
        return Err(Error::Param(format!(
            "PGM export takes a single-view mask, got {} views",
            g.views
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    Ok(out)
}

pub fn export_mask_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask_pgm(mask)?).map_err(|e| Error::io(path, e))
}

/// Parses a P5 image back into a mask (nonzero pixels are set).
pub fn decode_mask_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let bad = |msg: &str| Error::Param(format!("malformed PGM: {msg}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not P5"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("dimension"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval"));
    }
    let pixels = &bytes[pos + 1..];
    if pixels.len() != width * height {
        return Err(bad("pixel count"));
    }
    let grid = PatchGrid::new(1, height, width)?;
    BinaryMask::from_bits(grid, pixels.iter().map(|&p| p != 0).collect())
}
