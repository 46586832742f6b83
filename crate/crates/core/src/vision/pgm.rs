use std::path::Path;

use super::{io_err, Result, VisionError};

/// An 8-bit binary graymap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Parses a binary `P5` file with maxval 255. Header comments are allowed.
pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |detail: &str| VisionError::Pgm { path: path.to_owned(), detail: detail.to_owned() };
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P5") {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (width, height, maxval) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(bad("malformed header")),
    };
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height;
    if bytes.len() < start + n {
        return Err(bad(&format!("raster holds {} bytes, expected {n}", bytes.len().saturating_sub(start))));
    }
    Ok(Pgm { width, height, pixels: bytes[start..start + n].to_vec() })
}

/// Writes values in [0, 1] as an 8-bit P5 file; out-of-range values clamp.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(VisionError::InvalidParam(format!("{} values for a {width}x{height} image", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out).map_err(io_err(path))
}
