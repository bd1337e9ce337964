//! Grayscale (Pf) PFM reader/writer. Scanlines are stored bottom-to-top; a
//! negative scale factor marks little-endian floats, which is what we write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::MapError;

pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first (disk order is reversed on read/write).
    pub samples: Vec<f32>,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> MapError {
    MapError::Parse {
        path: path.display().to_string(),
        message: msg.into(),
    }
}

fn next_token<R: Read>(r: &mut R, path: &Path) -> Result<String, MapError> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8; 1];
        let n = r.read(&mut byte).map_err(|e| parse_err(path, e.to_string()))?;
        if n == 0 {
            if tok.is_empty() {
                return Err(parse_err(path, "unexpected end of header"));
            }
            return Ok(tok);
        }
        match byte[0] {
            b' ' | b'\t' | b'\r' | b'\n' => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            c => tok.push(c as char),
        }
    }
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, MapError> {
    let file = File::open(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut r = BufReader::new(file);

    let magic = next_token(&mut r, path)?;
    if magic != "Pf" {
        return Err(parse_err(path, format!("expected Pf magic, got {magic:?}")));
    }
    let width: usize = next_token(&mut r, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad width"))?;
    let height: usize = next_token(&mut r, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad height"))?;
    let scale: f32 = next_token(&mut r, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad scale"))?;
    if width == 0 || height == 0 {
        return Err(parse_err(path, "zero image dimension"));
    }
    let little_endian = scale < 0.0;

    let mut buf = vec![0u8; width * height * 4];
    r.read_exact(&mut buf)
        .map_err(|e| parse_err(path, format!("truncated float data: {e}")))?;

    let mut samples = vec![0f32; width * height];
    for row in 0..height {
        // disk rows run bottom-to-top
        let src_row = height - 1 - row;
        for col in 0..width {
            let off = (src_row * width + col) * 4;
            let bytes = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
            samples[row * width + col] = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }

    Ok(PfmImage {
        width,
        height,
        samples,
    })
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<(), MapError> {
    debug_assert_eq!(img.samples.len(), img.width * img.height);
    let file = File::create(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| parse_err(path, e.to_string());
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height).map_err(io_err)?;
    let mut bytes = Vec::with_capacity(img.samples.len() * 4);
    for row in (0..img.height).rev() {
        for col in 0..img.width {
            bytes.extend_from_slice(&img.samples[row * img.width + col].to_le_bytes());
        }
    }
    w.write_all(&bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}
