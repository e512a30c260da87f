use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read, write_atomic};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channels {
    Rgb,
    Y,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Rgb => 3,
            Channels::Y => 1,
        }
    }

    fn from_count(c: usize) -> Result<Self> {
        match c {
            3 => Ok(Channels::Rgb),
            1 => Ok(Channels::Y),
            _ => Err(Error::Data(format!("unsupported channel count {c}"))),
        }
    }
}

/// Interleaved (`HWC`) pixels.
#[derive(Clone, Debug, PartialEq)]
pub enum Pixels {
    U8(Vec<u8>),
    /// Unit range; clamped to `[0, 1]` on export.
    F32(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: Channels,
    pub pixels: Pixels,
}

const RAW_HEADER: usize = 12;

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: Channels, pixels: Pixels) -> Result<Self> {
        let len = match &pixels {
            Pixels::U8(v) => v.len(),
            Pixels::F32(v) => v.len(),
        };
        if len != width * height * channels.count() {
            return Err(Error::Data(format!(
                "{len} samples cannot fill a {width}x{height}x{} image",
                channels.count()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_f32(
        width: usize,
        height: usize,
        channels: Channels,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::new(width, height, channels, Pixels::F32(data))
    }

    pub fn from_u8(width: usize, height: usize, channels: Channels, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, channels, Pixels::U8(data))
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples as unit-range floats (u8 divided by 255).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.pixels {
            Pixels::U8(v) => v.iter().map(|&b| b as f32 / 255.0).collect(),
            Pixels::F32(v) => v.clone(),
        }
    }

    pub fn to_f32(&self) -> ImageBuffer {
        ImageBuffer {
            pixels: Pixels::F32(self.to_f32_vec()),
            ..self.clone()
        }
    }

    /// Samples as unit-range f64, for metrics.
    pub(crate) fn to_f64_vec(&self) -> Vec<f64> {
        match &self.pixels {
            Pixels::U8(v) => v.iter().map(|&b| b as f64 / 255.0).collect(),
            Pixels::F32(v) => v.iter().map(|&b| b as f64).collect(),
        }
    }

    /// Clamps to `[0, 1]` and rounds to 8 bits.
    pub fn to_u8(&self) -> ImageBuffer {
        let data = match &self.pixels {
            Pixels::U8(v) => v.clone(),
            Pixels::F32(v) => v
                .iter()
                .map(|&f| (f.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        };
        ImageBuffer {
            pixels: Pixels::U8(data),
            ..self.clone()
        }
    }

    /// `(1, C, H, W)` planar tensor in unit range.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let c = self.channels.count();
        let (h, w) = (self.height, self.width);
        let src = self.to_f32_vec();
        let mut data = vec![T::zero(); c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] =
                        T::from_f64_lossy(src[(y * w + x) * c + ch] as f64);
                }
            }
        }
        Tensor::from_vec(Shape::new(1, c, h, w), data).expect("sized above")
    }

    /// Batch item `index` of a planar tensor, clamped to `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let s = t.shape();
        let channels = Channels::from_count(s.c)?;
        if index >= s.n {
            return Err(Error::dim(
                "image",
                format!("batch index {index} out of range for {s}"),
            ));
        }
        let mut data = vec![0f32; s.c * s.plane()];
        for ch in 0..s.c {
            for (i, &v) in t.plane(index, ch).iter().enumerate() {
                data[i * s.c + ch] = (v.to_f64_lossy() as f32).clamp(0.0, 1.0);
            }
        }
        Self::from_f32(s.w, s.h, channels, data)
    }

    /// Top-left `width × height` region.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Data(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels.count();
        let row = |y: usize| (y * self.width + x0) * c..(y * self.width + x0 + width) * c;
        let pixels = match &self.pixels {
            Pixels::U8(v) => Pixels::U8(
                (y0..y0 + height)
                    .flat_map(|y| v[row(y)].iter().copied())
                    .collect(),
            ),
            Pixels::F32(v) => Pixels::F32(
                (y0..y0 + height)
                    .flat_map(|y| v[row(y)].iter().copied())
                    .collect(),
            ),
        };
        Ok(ImageBuffer {
            width,
            height,
            channels: self.channels,
            pixels,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_u8(w as usize, h as usize, Channels::Rgb, rgb.into_raw())
    }

    /// 8-bit PNG, RGB or grayscale.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let u8s = self.to_u8();
        let Pixels::U8(data) = u8s.pixels else {
            unreachable!()
        };
        let color = match self.channels {
            Channels::Rgb => image::ColorType::Rgb8,
            Channels::Y => image::ColorType::L8,
        };
        let mut bytes = Vec::new();
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut bytes),
            &data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        write_atomic(path, &bytes)
    }

    /// Raw float format: width, height, channels as little-endian u32, then
    /// little-endian f32 samples, interleaved.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RAW_HEADER + 4 * self.len());
        for v in [self.width, self.height, self.channels.count()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for f in self.to_f32_vec() {
            out.extend_from_slice(&f.clamp(0.0, 1.0).to_le_bytes());
        }
        out
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RAW_HEADER {
            return Err(Error::Data("raw image shorter than its header".into()));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (w, h, c) = (word(0), word(1), word(2));
        let channels = Channels::from_count(c)?;
        let body = &bytes[RAW_HEADER..];
        if body.len() != 4 * w * h * c {
            return Err(Error::Data(format!(
                "raw body has {} bytes, expected {} for {w}x{h}x{c}",
                body.len(),
                4 * w * h * c
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_f32(w, h, channels, data)
    }

    pub fn save_raw(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_raw_bytes())
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        Self::from_raw_bytes(&read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageBuffer {
        let data: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
        ImageBuffer::from_u8(4, 3, Channels::Rgb, data).unwrap()
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = sample();
        img.save_png(&p).unwrap();
        assert_eq!(ImageBuffer::load_png(&p).unwrap(), img);
    }

    #[test]
    fn raw_roundtrip_and_clamp() {
        let img = ImageBuffer::from_f32(2, 1, Channels::Y, vec![0.25, 1.5]).unwrap();
        let back = ImageBuffer::from_raw_bytes(&img.to_raw_bytes()).unwrap();
        assert_eq!(back.to_f32_vec(), vec![0.25, 1.0]);
        assert_eq!(
            &img.to_raw_bytes()[..12],
            &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]
        );
        assert!(ImageBuffer::from_raw_bytes(&[1, 2, 3]).is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let img = sample().to_f32();
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), Shape::new(1, 3, 3, 4));
        assert_eq!(ImageBuffer::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn crop_and_bad_sizes() {
        let img = sample();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.width, 2);
        let Pixels::U8(v) = &c.pixels else { panic!() };
        let Pixels::U8(src) = &img.pixels else {
            panic!()
        };
        assert_eq!(&v[..6], &src[(4 + 1) * 3..(4 + 3) * 3]);
        assert!(img.crop(3, 0, 2, 1).is_err());
        assert!(ImageBuffer::from_u8(2, 2, Channels::Rgb, vec![0; 5]).is_err());
    }
}
