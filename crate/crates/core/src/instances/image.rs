//! Grayscale image marginals from plain PGM (P2/P5) or CSV matrices.

use std::path::Path;

use super::Histogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn to_histogram(&self) -> Result<Histogram> {
        Histogram::from_weights(self.pixels.clone())
    }
}

/// Loads a PGM (`P2`/`P5`) file, or a CSV/whitespace matrix for any other extension.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes).map_err(parse_err)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| parse_err(e.to_string()))?;
        parse_csv(&text).map_err(parse_err)
    }
}

// Reads one header token, skipping whitespace and `#` comments. Returns the token and the
// position right after it.
fn pgm_token(bytes: &[u8], mut pos: usize) -> Option<(&str, usize)> {
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
    if pos == start {
        return None;
    }
    let tok = std::str::from_utf8(&bytes[start..pos]).ok()?;
    Some((tok, pos))
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, String> {
    let (magic, mut pos) = pgm_token(bytes, 0).ok_or("missing magic")?;
    let binary = magic == "P5";
    let mut header = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        let (tok, p) = pgm_token(bytes, pos).ok_or(format!("missing {name}"))?;
        header[k] = tok.parse().map_err(|_| format!("bad {name} `{tok}`"))?;
        pos = p;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let count = width * height;
    let pixels = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let depth = if maxval < 256 { 1 } else { 2 };
        let raster = bytes.get(start..start + count * depth).ok_or("truncated raster")?;
        raster
            .chunks(depth)
            .map(|c| if depth == 1 { c[0] as f64 } else { u16::from_be_bytes([c[0], c[1]]) as f64 })
            .collect()
    } else {
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let (tok, p) = pgm_token(bytes, pos).ok_or(format!("missing pixel {k}"))?;
            out.push(tok.parse::<f64>().map_err(|_| format!("bad pixel {k} `{tok}`"))?);
            pos = p;
        }
        out
    };
    Ok(GrayImage { width, height, pixels })
}

fn parse_csv(text: &str) -> Result<GrayImage, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: bad value `{t}`", lineno + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("empty matrix".into());
    }
    Ok(GrayImage {
        width: rows[0].len(),
        height: rows.len(),
        pixels: rows.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_with_comment() {
        let img = parse_pgm(b"P2\n# a comment\n3 2\n255\n0 1 2\n3 4 5\n").unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn binary_pgm() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 255]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.pixels, vec![0.0, 10.0, 20.0, 255.0]);
        assert!(parse_pgm(b"P5 2 2 255\n\x00").is_err());
    }

    #[test]
    fn csv_matrix() {
        let img = parse_csv("1,2\n3, 4\n").unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        let h = img.to_histogram().unwrap();
        assert!((h[3] - 0.4).abs() < 1e-15);
        assert!(parse_csv("1,2\n3\n").is_err());
        assert!(parse_csv("1,x\n").is_err());
    }
}
