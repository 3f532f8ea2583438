//! Binary PGM (P5, maxval 255) reading and writing.
//!
//! Images are stored as one byte per pixel; masks use 0 for background
//! and 255 for foreground.

use crate::mask::BinaryMask;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("pgm i/o failed for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad pgm file {path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> PgmError {
    PgmError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> PgmError {
    PgmError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_gray(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<(), PgmError> {
    assert_eq!(bytes.len(), width * height);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    file.write_all(format!("P5\n{width} {height}\n255\n").as_bytes())
        .map_err(|e| io_err(path, e))?;
    file.write_all(bytes).map_err(|e| io_err(path, e))?;
    file.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>), PgmError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut raw)
        .map_err(|e| io_err(path, e))?;
    if raw.len() < 2 || &raw[0..2] != b"P5" {
        return Err(format_err(path, "missing P5 magic"));
    }
    // Header tokens: magic, width, height, maxval. '#' starts a comment.
    let mut pos = 2usize;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        while pos < raw.len() && (raw[pos].is_ascii_whitespace() || raw[pos] == b'#') {
            if raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        let token = std::str::from_utf8(&raw[start..pos])
            .map_err(|_| format_err(path, "non-ascii header"))?;
        let value: usize = token
            .parse()
            .map_err(|_| format_err(path, format!("bad header field {token:?}")))?;
        fields.push(value);
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= raw.len() || !raw[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing raster separator"));
    }
    pos += 1;
    let need = width * height;
    if raw.len() < pos + need {
        return Err(format_err(
            path,
            format!("truncated raster: need {need}, found {}", raw.len() - pos),
        ));
    }
    Ok((width, height, raw[pos..pos + need].to_vec()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), PgmError> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    write_gray(path, mask.width(), mask.height(), &bytes)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, PgmError> {
    let (w, h, bytes) = read_gray(path)?;
    let bits = bytes.iter().map(|&b| (b >= 128) as u8).collect();
    Ok(BinaryMask::from_bits(h, w, bits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let bytes: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_gray(&path, 4, 3, &bytes).unwrap();
        let (w, h, got) = read_gray(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(got, bytes);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        let mut m = BinaryMask::zeros(5, 4);
        m.set(0, 0, true);
        m.set(4, 3, true);
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn bad_magic_and_truncation_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.pgm");
        std::fs::write(&bad, b"P6\n2 2\n255\nxxxx").unwrap();
        assert!(matches!(read_gray(&bad), Err(PgmError::Format { .. })));

        let trunc = dir.path().join("trunc.pgm");
        std::fs::write(&trunc, b"P5\n4 4\n255\nshort").unwrap();
        assert!(matches!(read_gray(&trunc), Err(PgmError::Format { .. })));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# made by hand\n2 1\n255\nab").unwrap();
        let (w, h, bytes) = read_gray(&path).unwrap();
        assert_eq!((w, h, bytes), (2, 1, b"ab".to_vec()));
    }
}
