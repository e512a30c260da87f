use super::buffer::ImageBuffer;
use crate::error::{Error, Result};

/// Rational scale factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResizeFactor {
    pub num: usize,
    pub den: usize,
}

impl ResizeFactor {
    pub fn down(by: usize) -> Self {
        ResizeFactor { num: 1, den: by }
    }

    pub fn up(by: usize) -> Self {
        ResizeFactor { num: by, den: 1 }
    }

    fn ratio(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn validate(self) -> Result<()> {
        let ok = (self.num == 1 && (1..=4).contains(&self.den))
            || (self.den == 1 && (1..=4).contains(&self.num));
        if !ok {
            return Err(Error::Unsupported(format!(
                "bicubic factor {}/{}",
                self.num, self.den
            )));
        }
        Ok(())
    }
}

/// Keys cubic with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Symmetric (mirror) boundary extension.
fn mirror(i: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Normalized taps per output index: `(source index, weight)`.
fn contributions(
    in_len: usize,
    out_len: usize,
    scale: f64,
    antialias: bool,
) -> Vec<Vec<(usize, f64)>> {
    let (kscale, width) = if scale < 1.0 && antialias {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let taps = width.ceil() as isize + 2;
    (0..out_len)
        .map(|i| {
            // 1-based output coordinate mapped into 1-based input space
            let u = (i + 1) as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as isize;
            let raw: Vec<(isize, f64)> = (0..taps)
                .map(|p| {
                    let j = left + p;
                    (j, kscale * cubic(kscale * (u - j as f64)))
                })
                .collect();
            let sum: f64 = raw.iter().map(|(_, w)| w).sum();
            raw.into_iter()
                .filter(|(_, w)| *w != 0.0)
                .map(|(j, w)| (mirror(j - 1, in_len), w / sum))
                .collect()
        })
        .collect()
}

/// Separable bicubic resize in the `imresize` convention: half-pixel
/// alignment, mirror borders, and (when downscaling with `antialias`) the
/// kernel stretched by the inverse factor.
pub fn bicubic_resize(
    img: &ImageBuffer,
    factor: ResizeFactor,
    antialias: bool,
) -> Result<ImageBuffer> {
    factor.validate()?;
    let out_dim = |len: usize| -> Result<usize> {
        if (len * factor.num) % factor.den != 0 {
            return Err(Error::Data(format!(
                "dimension {len} is not divisible by {}",
                factor.den
            )));
        }
        Ok(len * factor.num / factor.den)
    };
    let (ow, oh) = (out_dim(img.width)?, out_dim(img.height)?);
    if ow == 0 || oh == 0 {
        return Err(Error::Data("bicubic resize to an empty image".into()));
    }
    let scale = factor.ratio();
    let c = img.channels.count();
    let src = img.to_f64_vec();
    let (w, h) = (img.width, img.height);

    let cols = contributions(w, ow, scale, antialias);
    let mut horiz = vec![0.0f64; h * ow * c];
    for y in 0..h {
        for (x, taps) in cols.iter().enumerate() {
            for ch in 0..c {
                horiz[(y * ow + x) * c + ch] = taps
                    .iter()
                    .map(|&(j, wt)| wt * src[(y * w + j) * c + ch])
                    .sum();
            }
        }
    }
    let rows = contributions(h, oh, scale, antialias);
    let mut out = vec![0f32; oh * ow * c];
    for (y, taps) in rows.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                let v: f64 = taps
                    .iter()
                    .map(|&(j, wt)| wt * horiz[(j * ow + x) * c + ch])
                    .sum();
                out[(y * ow + x) * c + ch] = v as f32;
            }
        }
    }
    ImageBuffer::from_f32(ow, oh, img.channels, out)
}
