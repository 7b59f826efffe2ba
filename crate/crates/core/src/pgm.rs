//! Binary portable greymap (P5) reading and writing, 8-bit only.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary greymap: {0}")]
    Format(String),
    #[error("unsupported maxval {0}, only 8-bit greymaps are handled")]
    MaxVal(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// An 8-bit greyscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreyImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GreyImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PgmError> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PgmError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PgmError> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(PgmError::Format(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = parse_number(next_token(bytes, &mut pos)?)?;
        let height = parse_number(next_token(bytes, &mut pos)?)?;
        let maxval = parse_number(next_token(bytes, &mut pos)?)?;
        if maxval == 0 || maxval > 255 {
            return Err(PgmError::MaxVal(maxval as u32));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(PgmError::Format("missing raster separator".into()));
        }
        pos += 1;
        let expected = width * height;
        let data = &bytes[pos..];
        if data.len() < expected {
            return Err(PgmError::Truncated {
                expected,
                found: data.len(),
            });
        }
        Ok(Self::new(width, height, data[..expected].to_vec()))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PgmError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::decode(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PgmError> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], PgmError> {
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
        return Err(PgmError::Format("unexpected end of header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(tok: &[u8]) -> Result<usize, PgmError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PgmError::Format(format!("bad number {:?}", String::from_utf8_lossy(tok))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_bytes() {
        let img = GreyImage::new(3, 2, vec![0, 85, 170, 255, 1, 0]);
        let bytes = img.encode();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 85, 170, 255, 1, 0]);
        assert_eq!(GreyImage::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = GreyImage::decode(&bytes).unwrap();
        assert_eq!(img.pixels, vec![7, 9]);
    }

    #[test]
    fn rejects_ascii_and_truncated() {
        assert!(matches!(
            GreyImage::decode(b"P2\n1 1\n255\n0"),
            Err(PgmError::Format(_))
        ));
        assert!(matches!(
            GreyImage::decode(b"P5\n4 4\n255\n\x00\x01"),
            Err(PgmError::Truncated { expected: 16, found: 2 })
        ));
        assert!(matches!(
            GreyImage::decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(PgmError::MaxVal(65535))
        ));
    }
}
