//! Binary greyscale PGM (`P5`) images.

use mobilecaps_core::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PgmError {
    #[error("bad magic {0:?}, expected P5")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} outside 1..=65535")]
    MaxVal(u32),
    #[error("pixel data has {found} bytes, expected {expected}")]
    Length { expected: usize, found: usize },
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&str, PgmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| PgmError::Header("non-ASCII header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32, PgmError> {
        let t = self.token()?;
        t.parse().map_err(|_| PgmError::Header(format!("{what} `{t}` is not a number")))
    }
}

/// Decodes a P5 image to `[height, width, 1]` with values `v / maxval`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>, PgmError> {
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token()?;
    if magic != "P5" {
        return Err(PgmError::BadMagic(magic.chars().take(8).collect()));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MaxVal(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::Header(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::Header("missing whitespace after maxval".into()));
    }
    let raster = &bytes[h.pos + 1..];
    let wide = maxval > 255;
    let expected = width * height * if wide { 2 } else { 1 };
    if raster.len() != expected {
        return Err(PgmError::Length { expected, found: raster.len() });
    }
    let scale = maxval as f32;
    let data = if wide {
        raster.chunks_exact(2).map(|p| f32::from(u16::from_be_bytes([p[0], p[1]])) / scale).collect()
    } else {
        raster.iter().map(|&b| f32::from(b) / scale).collect()
    };
    Ok(Tensor::from_vec(&[height, width, 1], data).expect("length checked"))
}

/// Encodes `[height, width, 1]` values in `[0, 1]` as an 8-bit P5 image.
pub fn encode(img: &Tensor<f32>) -> Vec<u8> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
