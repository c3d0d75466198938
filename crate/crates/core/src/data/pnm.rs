//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded 8-bit raster, interleaved channels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

/// Parse an in-memory P5/P6 file. `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<PnmImage> {
    let header_err = |detail: &str| Error::ImageHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let magic = bytes.get(..2).unwrap_or(bytes);
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => {
            return Err(Error::UnknownImageFormat {
                path: path.to_path_buf(),
                magic: String::from_utf8_lossy(magic).into_owned(),
            })
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number().ok_or_else(|| header_err("missing width"))?;
    let height = cur.number().ok_or_else(|| header_err("missing height"))?;
    let maxval = cur.number().ok_or_else(|| header_err("missing maxval"))?;
    if width == 0 || height == 0 {
        return Err(header_err("zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(header_err(&format!("maxval {maxval} unsupported (8-bit only)")));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::TruncatedImage {
            path: path.to_path_buf(),
            detail: "header not terminated".into(),
        });
    }
    let start = cur.pos + 1;
    let need = width * height * channels;
    let have = bytes.len().saturating_sub(start);
    if have < need {
        return Err(Error::TruncatedImage {
            path: path.to_path_buf(),
            detail: format!("expected {need} pixel bytes, found {have}"),
        });
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        pixels: bytes[start..start + need].to_vec(),
    })
}

pub fn read(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn encode(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidArgument(format!("PNM supports 1 or 3 channels, got {c}"))),
    };
    if pixels.len() != width * height * channels {
        return Err(Error::InvalidArgument(format!(
            "{} pixel bytes for a {width}x{height}x{channels} image",
            pixels.len()
        )));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

fn write(path: &Path, width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode(width, height, channels, pixels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write(path, width, height, 1, pixels)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write(path, width, height, 3, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> &Path {
        Path::new(s)
    }

    #[test]
    fn decode_with_comments() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode(&bytes, p("x.pgm")).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 1));
        assert_eq!(img.pixels, vec![0, 255, 128, 64]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert!(matches!(decode(b"P2\n1 1\n255\n0", p("a")), Err(Error::UnknownImageFormat { .. })));
        assert!(matches!(decode(b"GIF89a", p("a")), Err(Error::UnknownImageFormat { .. })));
        assert!(matches!(decode(b"P5\n2 2\n255\n\x00\x01", p("a")), Err(Error::TruncatedImage { .. })));
        assert!(matches!(decode(b"P6\n2 2\n255\n\x00\x01\x02", p("a")), Err(Error::TruncatedImage { .. })));
        assert!(matches!(decode(b"P5\n2\n", p("a")), Err(Error::ImageHeader { .. })));
        assert!(matches!(decode(b"P5\n1 1\n65535\n\x00\x00", p("a")), Err(Error::ImageHeader { .. })));
    }

    #[test]
    fn encode_decode_roundtrip() {
        let rgb: Vec<u8> = (0..3 * 4 * 3).map(|i| (i * 7) as u8).collect();
        let bytes = encode(4, 3, 3, &rgb).unwrap();
        let img = decode(&bytes, p("a.ppm")).unwrap();
        assert_eq!((img.width, img.height, img.channels), (4, 3, 3));
        assert_eq!(img.pixels, rgb);
        assert!(encode(2, 2, 1, &[0; 3]).is_err());
    }
}
