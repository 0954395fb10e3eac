//! Binary portable pixmap/graymap (P6/P5) with 8-bit samples.

use crate::error::{Error, Result};

/// An 8-bit RGB raster, pixels interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty raster {width}x{height}")));
        }
        if rgb.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "raster {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        Ok(Frame { width, height, rgb })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' && self.bytes[self.pos] != b'\r' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Image(format!("missing {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Image(format!("{what} out of range")))
    }
}

/// Decodes a P6 (RGB) or P5 (gray, replicated to three channels) image with
/// maxval 255.
pub fn decode_image(bytes: &[u8]) -> Result<Frame> {
    let gray = match bytes.get(..2) {
        Some(b"P6") => false,
        Some(b"P5") => true,
        _ => {
            return Err(Error::Image(format!(
                "unsupported magic {:?}; expected P5 or P6",
                String::from_utf8_lossy(&bytes[..bytes.len().min(2)])
            )))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported maxval {maxval}; only 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("empty raster {width}x{height}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::Image("missing whitespace after maxval".into())),
    }
    let channels = if gray { 1 } else { 3 };
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Image("raster size overflows".into()))?;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(Error::Image(format!("raster truncated: {} of {need} bytes", raster.len())));
    }
    if raster.len() > need {
        return Err(Error::Image(format!("{} bytes of trailing data", raster.len() - need)));
    }
    let rgb = if gray {
        raster.iter().flat_map(|&g| [g, g, g]).collect()
    } else {
        raster.to_vec()
    };
    Frame::new(width, height, rgb)
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.rgb);
    out
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "graymap size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}
