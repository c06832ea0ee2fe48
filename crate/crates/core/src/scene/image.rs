use std::path::Path;

use crate::fsutil::{read_bytes, write_atomic};
use crate::{Error, Result};

/// Row-major image with 1 or 3 channels of values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    /// Rounds a value onto this depth's quantization grid.
    pub fn quantize(self, v: f64) -> f64 {
        let m = self.maxval() as f64;
        (v.clamp(0.0, 1.0) * m).round() / m
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageBuffer, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn quantized(&self, depth: BitDepth) -> ImageBuffer {
        self.map(|v| depth.quantize(v))
    }

    /// Bilinear sample of channel `c` at continuous pixel coordinates
    /// (pixel centers sit at half-integers), clamped at the borders.
    pub fn sample_bilinear(&self, u: f64, v: f64, c: usize) -> f64 {
        let x = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
        let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Encodes as binary PGM (1 channel) or PPM (3 channels).
    pub fn encode_pnm(&self, depth: BitDepth) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let maxval = depth.maxval();
        let mut out = format!("{magic}\n{} {}\n{maxval}\n", self.width, self.height).into_bytes();
        let m = maxval as f64;
        for &v in &self.data {
            let q = (v.clamp(0.0, 1.0) * m).round() as u32;
            match depth {
                BitDepth::Eight => out.push(q as u8),
                BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
            }
        }
        out
    }

    pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
        let fmt_err = |m: &str| Error::ImageFormat {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(fmt_err("truncated header"));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
            if tokens.len() == 1 && tokens[0] != "P5" && tokens[0] != "P6" {
                return Err(fmt_err(&format!("unsupported magic number {:?}", tokens[0])));
            }
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = if tokens[0] == "P5" { 1 } else { 3 };
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| fmt_err(&format!("invalid {what} {s:?}")))
        };
        let width = parse(&tokens[1], "width")?;
        let height = parse(&tokens[2], "height")?;
        let maxval = parse(&tokens[3], "maxval")?;
        let bytes_per = match maxval {
            255 => 1,
            65535 => 2,
            _ => return Err(fmt_err(&format!("unsupported maxval {maxval}"))),
        };
        let n = width * height * channels;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() < n * bytes_per {
            return Err(fmt_err(&format!(
                "truncated payload: expected {} bytes, found {}",
                n * bytes_per,
                raster.len()
            )));
        }
        let m = maxval as f64;
        let data = if bytes_per == 1 {
            raster[..n].iter().map(|&b| b as f64 / m).collect()
        } else {
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / m)
                .collect()
        };
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    ImageBuffer::decode_pnm(&read_bytes(path)?, path)
}

pub fn write_image(image: &ImageBuffer, path: &Path, depth: BitDepth) -> Result<()> {
    write_atomic(path, &image.encode_pnm(depth))
}
