//! On-disk formats.
//!
//! * PGM: binary `P5`, maxval 255, single image.
//! * WPGD grid: `b"WPGD"`, dtype tag `u8 = 1` (f64), `u64` rows, `u64` cols,
//!   then `rows * cols` f64 values in row-major order. Little-endian.
//! * Checkpoints use the `WPNN` layout from `wotf_core::nn`.

use std::fs;
use std::io::Write;
use std::path::Path;

use wotf_core::datasets::Image8;
use wotf_core::Grid;

use crate::error::{ProbeError, Result};

pub const GRID_MAGIC: &[u8; 4] = b"WPGD";
pub const GRID_DTYPE_F64: u8 = 1;

pub fn encode_pgm(img: &Image8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Parses a binary PGM. Comments (`#` to end of line) are allowed in the
/// header.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image8> {
    let bad = |reason: &str| ProbeError::format(path, reason);
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(bad(&format!(
            "unsupported PGM variant {magic:?}; only binary P5 is accepted"
        )));
    }
    let mut number = |what: &str| -> Result<usize> {
        token(&mut pos)?
            .parse()
            .map_err(|_| bad(&format!("malformed {what} in header")))
    };
    let (width, height, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if maxval != 255 {
        return Err(bad(&format!(
            "maxval {maxval} is not supported; expected 255"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(bad(&format!(
            "truncated payload: expected {need} bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Image8::new(width, height, bytes[pos..pos + need].to_vec()).map_err(|e| bad(&e.to_string()))
}

pub fn load_pgm(path: &Path) -> Result<Image8> {
    let bytes = fs::read(path).map_err(|e| ProbeError::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn save_pgm(img: &Image8, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

pub fn encode_grid(g: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 8 * g.len());
    out.extend_from_slice(GRID_MAGIC);
    out.push(GRID_DTYPE_F64);
    out.extend_from_slice(&(g.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(g.cols() as u64).to_le_bytes());
    for v in g.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<Grid> {
    let bad = |reason: String| ProbeError::format(path, reason);
    if bytes.len() < 21 || &bytes[..4] != GRID_MAGIC {
        return Err(bad("not a WPGD grid file".into()));
    }
    if bytes[4] != GRID_DTYPE_F64 {
        return Err(bad(format!("unsupported dtype tag {}", bytes[4])));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if bytes.len() - 21 != need {
        return Err(bad(format!(
            "payload is {} bytes, expected {need} for {rows}x{cols}",
            bytes.len() - 21
        )));
    }
    let data = bytes[21..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Grid::from_vec(rows, cols, data).map_err(|e| bad(e.to_string()))
}

pub fn load_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| ProbeError::io(path, e))?;
    decode_grid(&bytes, path)
}

/// Lossy 8-bit preview, min-max scaled.
pub fn grid_preview(g: &Grid) -> Image8 {
    Image8::from_grid_scaled(g)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ProbeError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| ProbeError::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(ProbeError::io(path, e));
    }
    Ok(())
}
