//! Binary PGM (`P5`) reading and writing.
//!
//! Only 8-bit rasters are supported. The header is tokenized the Netpbm way:
//! fields are separated by whitespace, `#` starts a comment running to the
//! end of the line, and exactly one whitespace byte separates the maxval from
//! the raster. Bytes after the raster are ignored.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("bad magic number {0:?}, expected \"P5\"")]
    BadMagic([u8; 2]),
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u64),
    #[error("malformed header: {0}")]
    BadHeader(&'static str),
    #[error("truncated pixel payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Header {
    width: usize,
    height: usize,
    raster_offset: usize,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        if is_space(bytes[pos]) {
            pos += 1;
        } else if bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            break;
        }
    }
    pos
}

fn read_number(bytes: &[u8], pos: usize, what: &'static str) -> Result<(u64, usize), PgmError> {
    let pos = skip_space_and_comments(bytes, pos);
    let start = pos;
    let mut end = pos;
    let mut value: u64 = 0;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u64::from(bytes[end] - b'0')))
            .ok_or(PgmError::BadHeader(what))?;
        end += 1;
    }
    if end == start {
        return Err(PgmError::BadHeader(what));
    }
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header, PgmError> {
    if bytes.len() < 2 {
        return Err(PgmError::BadHeader("missing magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" {
        return Err(PgmError::BadMagic(magic));
    }
    let (width, pos) = read_number(bytes, 2, "width")?;
    let (height, pos) = read_number(bytes, pos, "height")?;
    let (maxval, pos) = read_number(bytes, pos, "maxval")?;
    if maxval > 255 {
        return Err(PgmError::MaxvalTooLarge(maxval));
    }
    if maxval == 0 {
        return Err(PgmError::BadHeader("maxval must be positive"));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader("zero image dimension"));
    }
    match bytes.get(pos) {
        Some(&b) if is_space(b) => {}
        _ => return Err(PgmError::BadHeader("missing whitespace after maxval")),
    }
    let width = usize::try_from(width).map_err(|_| PgmError::BadHeader("width"))?;
    let height = usize::try_from(height).map_err(|_| PgmError::BadHeader("height"))?;
    Ok(Header { width, height, raster_offset: pos + 1 })
}

/// Decode a `P5` byte stream.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    let header = parse_header(bytes)?;
    let found = bytes.len() - header.raster_offset;
    let expected = header
        .width
        .checked_mul(header.height)
        .ok_or(PgmError::BadHeader("image dimensions overflow"))?;
    if found < expected {
        return Err(PgmError::Truncated { expected, found });
    }
    let data = bytes[header.raster_offset..header.raster_offset + expected].to_vec();
    // Dimensions were validated above.
    Ok(GrayImage::new(header.width, header.height, data).expect("validated dimensions"))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.as_slice());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, PgmError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => PgmError::MissingFile(path.display().to_string()),
        _ => PgmError::Io(e),
    })?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), PgmError> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}
