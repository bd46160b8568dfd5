//! Float image buffers with PNG (8-bit sRGB) and raw float32 dump I/O.
//!
//! The raw format is a 16-byte header {magic "MSRW", height, width,
//! channels as little-endian u32} followed by row-major, channel-interleaved
//! float32 data.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Real};

pub const RAW_MAGIC: [u8; 4] = *b"MSRW";

/// Row-major float image, `channels` interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Real> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        }
    }

    pub fn from_rgb(width: usize, height: usize, pixels: &[Vector3<T>]) -> Self {
        assert_eq!(pixels.len(), width * height);
        let mut data = Vec::with_capacity(pixels.len() * 3);
        for p in pixels {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn rgb_pixels(&self) -> Vec<Vector3<T>> {
        assert_eq!(self.channels, 3);
        self.data
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn shape_matches(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }
}

/// Linear to sRGB transfer (no additional gamma).
pub fn linear_to_srgb(l: f64) -> f64 {
    let l = l.clamp(0.0, 1.0);
    if l <= 0.003_130_8 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(s: f64) -> f64 {
    if s <= 0.040_45 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

/// Writes an RGB image as 8-bit sRGB PNG.
pub fn write_png<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "png writer needs 3 channels, got {}",
            img.channels
        )));
    }
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = image::Rgb([
                (linear_to_srgb(to_f64(img.at(x, y, 0))) * 255.0).round() as u8,
                (linear_to_srgb(to_f64(img.at(x, y, 1))) * 255.0).round() as u8,
                (linear_to_srgb(to_f64(img.at(x, y, 2))) * 255.0).round() as u8,
            ]);
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    out.save(path.as_ref())?;
    Ok(())
}

/// Reads an 8-bit PNG into linear floats. Grayscale inputs produce one
/// channel, everything else three.
pub fn read_png<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(_) => Error::MissingFile(path.display().to_string()),
        other => Error::Image(other),
    })?;
    Ok(match dynimg {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let mut img = Image::new(w, h, 1);
            for (i, p) in g.pixels().enumerate() {
                img.data[i] = cast(p.0[0] as f64 / 255.0);
            }
            img
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut img = Image::new(w, h, 3);
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    img.data[i * 3 + c] = cast(srgb_to_linear(p.0[c] as f64 / 255.0));
                }
            }
            img
        }
    })
}

pub fn write_raw<T: Real>(img: &Image<T>, out: &mut impl Write) -> Result<()> {
    out.write_all(&RAW_MAGIC)?;
    out.write_all(&(img.height as u32).to_le_bytes())?;
    out.write_all(&(img.width as u32).to_le_bytes())?;
    out.write_all(&(img.channels as u32).to_le_bytes())?;
    for &v in &img.data {
        out.write_all(&(to_f64(v) as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw<T: Real>(input: &mut impl Read) -> Result<Image<T>> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if header[0..4] != RAW_MAGIC {
        return Err(Error::BadManifest("raw image magic mismatch".into()));
    }
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; w * h * c * 4];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| cast(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    Ok(Image {
        width: w,
        height: h,
        channels: c,
        data,
    })
}

pub fn save_raw<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_raw(img, &mut out)
}

pub fn load_raw<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.display().to_string()))?;
    read_raw(&mut std::io::BufReader::new(file))
}

/// Loads an image by extension: `.raw` files via the float dump, anything
/// else through the PNG path.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    if path.extension().map_or(false, |e| e == "raw") {
        load_raw(path)
    } else {
        read_png(path)
    }
}
