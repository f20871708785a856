//! In-memory images and binary PPM/PGM interchange.
//!
//! Pixels are stored as `f32` in `[0, 1]`, row-major, channels interleaved.
//! Files use 8-bit binary netpbm formats: P6 for color, P5 for grayscale.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}x{}x{} = {}",
                data.len(),
                width,
                height,
                channels,
                width * height * channels
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at continuous coordinates, where integer (u, v) lands
    /// exactly on pixel (u, v). Coordinates are clamped to the image border.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.channels);
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64) as f32;
        let fy = (v - y0 as f64) as f32;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for c in 0..self.channels {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    fn quantize(v: f32) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    /// Writes a binary P6 file. Requires exactly 3 channels.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::invalid(format!(
                "PPM output requires 3 channels, image has {}",
                self.channels
            )));
        }
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        write!(buf, "P6\n{} {}\n255\n", self.width, self.height).expect("vec write");
        buf.extend(self.data.iter().map(|&v| Self::quantize(v)));
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Writes a binary P5 file. Requires exactly 1 channel.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::invalid(format!(
                "PGM output requires 1 channel, image has {}",
                self.channels
            )));
        }
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        write!(buf, "P5\n{} {}\n255\n", self.width, self.height).expect("vec write");
        buf.extend(self.data.iter().map(|&v| Self::quantize(v)));
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let (w, h, payload) = read_netpbm(path, b"P6", 3)?;
        let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
        Image::from_vec(w, h, 3, data)
    }

    pub fn read_pgm(path: &Path) -> Result<Image> {
        let (w, h, payload) = read_netpbm(path, b"P5", 1)?;
        let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
        Image::from_vec(w, h, 1, data)
    }
}

/// Per-pixel instance labels: 0 is background, 1.. are vehicle ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdImage {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u8>,
}

impl IdImage {
    pub fn new(width: usize, height: usize) -> Self {
        IdImage {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: u8) {
        self.ids[y * self.width + x] = id;
    }

    /// Ids are written verbatim as 8-bit gray values.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.ids.len() + 32);
        write!(buf, "P5\n{} {}\n255\n", self.width, self.height).expect("vec write");
        buf.extend_from_slice(&self.ids);
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<IdImage> {
        let (width, height, ids) = read_netpbm(path, b"P5", 1)?;
        Ok(IdImage { width, height, ids })
    }
}

/// Parses a binary netpbm header (magic, width, height, maxval 255) and
/// returns the payload. `#` comments are allowed between header tokens.
fn read_netpbm(path: &Path, magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let what: &'static str = if magic == b"P6" { "PPM" } else { "PGM" };
    let fail = |detail: String| Error::Format {
        what,
        path: path.to_path_buf(),
        detail,
    };

    if bytes.len() < 2 || &bytes[0..2] != magic {
        return Err(fail(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }

    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(fail("truncated header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(fail("expected integer header field".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        *field = text
            .parse()
            .map_err(|e| fail(format!("bad header field `{text}`: {e}")))?;
    }

    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fail(format!("unsupported maxval {maxval}, expected 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fail("missing whitespace after header".into())),
    }

    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(fail(format!(
            "payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    Ok((width, height, payload[..expected].to_vec()))
}
