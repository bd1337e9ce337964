//! Binary (P5) PGM reader/writer. 8-bit for maxval < 256, otherwise 16-bit
//! big-endian sample words, per the netpbm convention.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::MapError;

pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> MapError {
    MapError::Parse {
        path: path.display().to_string(),
        message: msg.into(),
    }
}

/// Read one whitespace/comment-delimited header token.
fn next_token<R: Read>(r: &mut R, path: &Path) -> Result<String, MapError> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        let n = r.read(&mut byte).map_err(|e| parse_err(path, e.to_string()))?;
        if n == 0 {
            if tok.is_empty() {
                return Err(parse_err(path, "unexpected end of header"));
            }
            return Ok(tok);
        }
        let c = byte[0];
        if in_comment {
            if c == b'\n' {
                in_comment = false;
            }
            continue;
        }
        match c {
            b'#' => in_comment = true,
            b' ' | b'\t' | b'\r' | b'\n' => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            _ => tok.push(c as char),
        }
    }
}

pub fn read_pgm(path: &Path) -> Result<PgmImage, MapError> {
    let file = File::open(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut r = BufReader::new(file);

    let magic = next_token(&mut r, path)?;
    if magic != "P5" {
        return Err(parse_err(path, format!("expected P5 magic, got {magic:?}")));
    }
    let width: usize = next_token(&mut r, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad width"))?;
    let height: usize = next_token(&mut r, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad height"))?;
    let maxval: u32 = next_token(&mut r, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad maxval"))?;
    if width == 0 || height == 0 {
        return Err(parse_err(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, format!("unsupported maxval {maxval}")));
    }
    let maxval = maxval as u16;

    let count = width * height;
    let samples = if maxval < 256 {
        let mut buf = vec![0u8; count];
        r.read_exact(&mut buf)
            .map_err(|e| parse_err(path, format!("truncated pixel data: {e}")))?;
        buf.into_iter().map(u16::from).collect()
    } else {
        let mut buf = vec![0u8; count * 2];
        r.read_exact(&mut buf)
            .map_err(|e| parse_err(path, format!("truncated pixel data: {e}")))?;
        buf.chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    };

    Ok(PgmImage {
        width,
        height,
        maxval,
        samples,
    })
}

pub fn write_pgm(path: &Path, img: &PgmImage) -> Result<(), MapError> {
    debug_assert_eq!(img.samples.len(), img.width * img.height);
    let file = File::create(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| parse_err(path, e.to_string());
    write!(w, "P5\n{} {}\n{}\n", img.width, img.height, img.maxval).map_err(io_err)?;
    if img.maxval < 256 {
        let bytes: Vec<u8> = img.samples.iter().map(|&s| s as u8).collect();
        w.write_all(&bytes).map_err(io_err)?;
    } else {
        let mut bytes = Vec::with_capacity(img.samples.len() * 2);
        for &s in &img.samples {
            bytes.extend_from_slice(&s.to_be_bytes());
        }
        w.write_all(&bytes).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = PgmImage {
            width: 3,
            height: 2,
            maxval: 65535,
            samples: vec![0, 1, 300, 65535, 12345, 7],
        };
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        assert_eq!(back.maxval, 65535);
        assert_eq!(back.samples, img.samples);
    }

    #[test]
    fn round_trip_8bit_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img8.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.samples, vec![0, 64, 128, 255]);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P6\n2 2\n255\n").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
