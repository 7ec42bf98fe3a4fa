//! 8-bit grayscale rasters and the binary PGM codec.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const WHITE: u8 = 255;

/// Row-major 8-bit grayscale image. Dark ink on a white background.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn invert(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| 255 - p).collect(),
        }
    }

    /// Tight bounding box `(x0, y0, x1, y1)` (exclusive ends) of the pixels
    /// darker than white, or `None` for a blank image.
    pub fn ink_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) < WHITE {
                    let b = bounds.get_or_insert((x, y, x + 1, y + 1));
                    b.0 = b.0.min(x);
                    b.1 = b.1.min(y);
                    b.2 = b.2.max(x + 1);
                    b.3 = b.3.max(y + 1);
                }
            }
        }
        bounds
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + width]);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Crops to the ink bounding box. Blank images are returned unchanged.
    pub fn trim_to_ink(&self) -> Self {
        match self.ink_bounds() {
            Some((x0, y0, x1, y1)) => self.crop(x0, y0, x1 - x0, y1 - y0),
            None => self.clone(),
        }
    }

    /// Bilinear resampling with pixel-centre alignment; samples outside the
    /// source clamp to the border.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height);
        let max_x = self.width as f64 - 1.0;
        let max_y = self.height as f64 - 1.0;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(x0, y0) as f64 * (1.0 - wx) + self.get(x1, y0) as f64 * wx;
                let bottom = self.get(x0, y1) as f64 * (1.0 - wx) + self.get(x1, y1) as f64 * wx;
                out.push((top * (1.0 - wy) + bottom * wy).round().clamp(0.0, 255.0) as u8);
            }
        }
        Self {
            width,
            height,
            pixels: out,
        }
    }

    /// Composites `src` at `(x, y)` keeping the darker pixel.
    pub fn blit_darkest(&mut self, src: &GrayImage, x: usize, y: usize) {
        assert!(x + src.width <= self.width && y + src.height <= self.height);
        for sy in 0..src.height {
            for sx in 0..src.width {
                let d = &mut self.pixels[(y + sy) * self.width + x + sx];
                *d = (*d).min(src.get(sx, sy));
            }
        }
    }

    /// Writes binary PGM (`P5`, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 20);
        self.write_pgm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads binary PGM with maxval 255. Comments in the header are allowed.
    pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut token = Vec::new();
        let mut in_comment = false;
        let mut byte = [0u8; 1];
        while fields.len() < 4 {
            if r.read(&mut byte)? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let c = byte[0];
            if in_comment {
                in_comment = c != b'\n';
                continue;
            }
            if c == b'#' {
                in_comment = true;
            } else if c.is_ascii_whitespace() {
                if !token.is_empty() {
                    fields.push(String::from_utf8_lossy(&token).into_owned());
                    token.clear();
                }
            } else {
                token.push(c);
            }
        }
        if fields[0] != "P5" {
            return Err(Error::Format(format!("unsupported PGM magic {:?}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("PGM maxval {maxval}, expected 255")));
        }
        let mut pixels = vec![0u8; width * height];
        r.read_exact(&mut pixels)?;
        Self::from_pixels(width, height, pixels)
    }
}
