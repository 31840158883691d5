//! Binary 8-bit PGM ("P5", maxval 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `round(p * 255)` after clamping to [0, 1].
pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Gray8 {
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height, "pixel count");
        Self {
            width,
            height,
            pixels: values.iter().map(|&p| quantize(p)).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    b if b.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err("header ends early".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?);
        }
        if fields[0] != "P5" {
            return Err(format!("expected magic P5, found {:?}", fields[0]));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
        let width = num(fields[1], "width")?;
        let height = num(fields[2], "height")?;
        let maxval = num(fields[3], "maxval")?;
        if maxval != 255 {
            return Err(format!("only maxval 255 is supported, found {maxval}"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err("missing separator before raster".into());
        }
        pos += 1;
        let need = width * height;
        let raster = &bytes[pos..];
        if raster.len() < need {
            return Err(format!("raster has {} bytes, header declares {need}", raster.len()));
        }
        Ok(Self {
            width,
            height,
            pixels: raster[..need].to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|reason| Error::Pgm {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = Gray8 {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 32, 128, 254, 255],
        };
        assert_eq!(Gray8::decode(&img.encode()).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n2 1\n# another\n255\n".to_vec();
        bytes.extend([7, 9]);
        assert_eq!(Gray8::decode(&bytes).unwrap().pixels, vec![7, 9]);
    }

    #[test]
    fn rejects_wrong_magic_and_short_raster() {
        assert!(Gray8::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Gray8::decode(b"P5\n2 2\n255\n\x01\x02").is_err());
        assert!(Gray8::decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }
}
