use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

/// RGB image, row-major HWC, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_hwc(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a channel-major `[3, H, W]` buffer.
    pub fn from_chw<T: Real>(width: usize, height: usize, chw: &[T]) -> Result<Self> {
        let hw = width * height;
        if chw.len() != 3 * hw {
            return Err(Error::shape(format!(
                "{} values for a 3x{height}x{width} tensor",
                chw.len()
            )));
        }
        let mut data = vec![0.0f32; 3 * hw];
        for c in 0..3 {
            for i in 0..hw {
                data[i * 3 + c] = chw[c * hw + i].as_f64() as f32;
            }
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn to_chw<T: Real>(&self) -> Vec<T> {
        let hw = self.width * self.height;
        let mut out = vec![T::zero(); 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                out[c * hw + i] = T::lit(self.data[i * 3 + c] as f64);
            }
        }
        out
    }

    pub fn pixel(&self, px: usize, py: usize) -> [f32; 3] {
        let i = (py * self.width + px) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, px: usize, py: usize, rgb: [f32; 3]) {
        let i = (py * self.width + px) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    write_png_raw(
        path,
        image.width,
        image.height,
        png::ColorType::Rgb,
        &image.to_u8(),
    )
}

/// Writes an 8-bit grayscale PNG from values in `[0, 1]`.
pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape("grayscale buffer size"));
    }
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    write_png_raw(path, width, height, png::ColorType::Grayscale, &bytes)
}

pub(crate) fn write_png_raw(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA) as an RGB image.
pub fn read_png(path: &Path) -> Result<Image> {
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * channels..(x + 1) * channels];
            let rgb = if channels < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        }
    }
    Image::from_hwc(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = Image::black(5, 3);
        img.set_pixel(1, 2, [1.0, 128.0 / 255.0, 7.0 / 255.0]);
        write_png(&path, &img).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }

    #[test]
    fn chw_layout_round_trip() {
        let img = Image::from_hwc(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let chw: Vec<f64> = img.to_chw();
        assert_eq!(chw.len(), 6);
        assert!((chw[1] - 0.4).abs() < 1e-6); // R of pixel 1
        assert!((chw[2] - 0.2).abs() < 1e-6); // G of pixel 0
        assert_eq!(Image::from_chw(2, 1, &chw).unwrap(), img);
    }
}
