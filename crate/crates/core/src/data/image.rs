use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height * width != pixels.len() || height == 0 || width == 0 {
            return Err(Error::invalid(format!("{} pixels do not fill a {height}x{width} image", pixels.len())));
        }
        Ok(Self { height, width, pixels })
    }

    /// Quantizes values in `[0, 1]` (clamped) to 8 bits.
    pub fn from_unit(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        let pixels = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Self::new(height, width, pixels)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        f32::from(self.pixels[row * self.width + col]) / 255.0
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        w.write_image_data(&self.pixels).map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        w.finish().map_err(|e| Error::Png(format!("{}: {e}", path.display())))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let png_err = |e: png::DecodingError| Error::Png(format!("{}: {e}", path.display()));
        let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(png_err)?;
        let info = reader.info();
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!(
                "{}: expected 8-bit grayscale, got {:?} {:?}",
                path.display(),
                info.color_type,
                info.bit_depth
            )));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h)];
        let frame = reader.next_frame(&mut buf).map_err(png_err)?;
        buf.truncate(frame.buffer_size());
        Self::new(h, w, buf)
    }
}
