//! Minimal 8-bit rasters and their PNG codec.
//!
//! Frames are RGB, sprites RGBA, masks single-channel (nonzero = set).
//! Encoding is deterministic: identical rasters always produce identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = decode(path)?;
        match img.channels {
            3 => Ok(Self {
                width: img.width,
                height: img.height,
                data: img.data,
            }),
            4 => {
                let data = img.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
                Ok(Self {
                    width: img.width,
                    height: img.height,
                    data,
                })
            }
            1 => Ok(Self {
                width: img.width,
                height: img.height,
                data: img.data.iter().flat_map(|&v| [v, v, v]).collect(),
            }),
            n => Err(Error::Codec(format!("{}: unsupported channel count {n}", path.display()))),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        encode(path, self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_to_vec(self.width, self.height, png::ColorType::Rgb, &self.data)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RgbaImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbaImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbaImage({}x{})", self.width, self.height)
    }
}

impl RgbaImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 4],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 4).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn put(&mut self, x: u32, y: u32, px: [u8; 4]) {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        self.data[i..i + 4].copy_from_slice(&px);
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = decode(path)?;
        let data = match img.channels {
            4 => img.data,
            3 => img.data.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
            n => return Err(Error::Codec(format!("{}: sprite needs RGB(A), got {n} channels", path.display()))),
        };
        Ok(Self {
            width: img.width,
            height: img.height,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        encode(path, self.width, self.height, png::ColorType::Rgba, &self.data)
    }
}

/// Binary raster; stored one byte per pixel as 0 or 1.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn fill_rect(&mut self, rect: PixelRect, value: bool) {
        let rect = rect.clip(self.width, self.height);
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                self.set(x, y, value);
            }
        }
    }

    /// Tight bounding rectangle of the set pixels, if any.
    pub fn bounds(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != u32::MAX).then_some(PixelRect { x0, y0, x1, y1 })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = decode(path)?;
        let c = img.channels as usize;
        let bits = img
            .data
            .chunks_exact(c)
            .map(|p| (p[..c.min(3)].iter().any(|&v| v != 0)) as u8)
            .collect();
        Ok(Self {
            width: img.width,
            height: img.height,
            bits,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
        encode(path, self.width, self.height, png::ColorType::Grayscale, &data)
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn clip(&self, width: u32, height: u32) -> Self {
        Self {
            x0: self.x0.min(width),
            y0: self.y0.min(height),
            x1: self.x1.min(width),
            y1: self.y1.min(height),
        }
    }
}

/// Round half up to the nearest pixel index (`floor(v + 0.5)`), clamped to `[0, limit]`.
pub fn round_half_up(v: f64, limit: u32) -> u32 {
    let r = (v + 0.5).floor();
    if r <= 0.0 {
        0
    } else if r >= limit as f64 {
        limit
    } else {
        r as u32
    }
}

struct Decoded {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => {
            // expand gray+alpha to RGBA
            buf = buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0], p[1]]).collect();
            4
        }
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Codec(format!("{}: indexed colour not expanded", path.display())))
        }
    };
    Ok(Decoded {
        width: info.width,
        height: info.height,
        channels,
        data: buf,
    })
}

fn encode_into<W: Write>(w: W, width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<()> {
    let mut encoder = png::Encoder::new(w, width, height);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Default);
    encoder.set_filter(png::FilterType::Sub);
    encoder.set_adaptive_filter(png::AdaptiveFilterType::NonAdaptive);
    let mut writer = encoder.write_header().map_err(|e| Error::Codec(e.to_string()))?;
    writer.write_image_data(data).map_err(|e| Error::Codec(e.to_string()))?;
    writer.finish().map_err(|e| Error::Codec(e.to_string()))
}

fn encode(path: &Path, width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_into(&mut w, width, height, color, data)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode_to_vec(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_into(&mut out, width, height, color, data)?;
    Ok(out)
}
