use super::buffer::{Channels, ImageBuffer};
use super::color::rgb_to_y;
use crate::error::{Error, Result};

fn check_pair(a: &ImageBuffer, b: &ImageBuffer, shave: usize) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::Data(format!(
            "image sizes differ: {}x{}x{} vs {}x{}x{}",
            a.width,
            a.height,
            a.channels.count(),
            b.width,
            b.height,
            b.channels.count()
        )));
    }
    if 2 * shave >= a.width || 2 * shave >= a.height {
        return Err(Error::Data(format!(
            "shave {shave} leaves nothing of a {}x{} image",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Planar copy of the region left after removing `shave` border pixels.
fn shaved(img: &ImageBuffer, shave: usize) -> (Vec<Vec<f64>>, usize, usize) {
    let c = img.channels.count();
    let src = img.to_f64_vec();
    let (w, h) = (img.width - 2 * shave, img.height - 2 * shave);
    let planes = (0..c)
        .map(|ch| {
            let mut p = Vec::with_capacity(w * h);
            for y in shave..shave + h {
                for x in shave..shave + w {
                    p.push(src[(y * img.width + x) * c + ch]);
                }
            }
            p
        })
        .collect();
    (planes, w, h)
}

/// `10 · log10(1 / MSE)` over the shaved region, peak 1.0. Identical inputs
/// give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, shave: usize) -> Result<f64> {
    check_pair(a, b, shave)?;
    let (pa, _, _) = shaved(a, shave);
    let (pb, _, _) = shaved(b, shave);
    let mut sq = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for (u, v) in x.iter().zip(y) {
            sq += (u - v) * (u - v);
        }
        n += x.len();
    }
    let mse = sq / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let g: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi * src[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM on single-channel images, Gaussian window, valid region.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, shave: usize) -> Result<f64> {
    ssim_with(a, b, shave, SsimParams::default())
}

pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, shave: usize, p: SsimParams) -> Result<f64> {
    check_pair(a, b, shave)?;
    if a.channels != Channels::Y {
        return Err(Error::Data("ssim needs single-channel images".into()));
    }
    let (pa, w, h) = shaved(a, shave);
    let (pb, _, _) = shaved(b, shave);
    if w < p.window || h < p.window {
        return Err(Error::Data(format!(
            "{w}x{h} region is smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let (x, y) = (&pa[0], &pb[0]);
    let g = gaussian(p.window, p.sigma);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
    let mu_x = filter_valid(x, w, h, &g);
    let mu_y = filter_valid(y, w, h, &g);
    let e_xx = filter_valid(&xx, w, h, &g);
    let e_yy = filter_valid(&yy, w, h, &g);
    let e_xy = filter_valid(&xy, w, h, &g);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sx = e_xx[i] - mx * mx;
            let sy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub psnr: f64,
    pub ssim: f64,
}

/// Y-channel PSNR and SSIM after shaving; RGB inputs are converted first.
pub fn evaluate_pair(sr: &ImageBuffer, hr: &ImageBuffer, shave: usize) -> Result<PairScore> {
    let to_y = |img: &ImageBuffer| match img.channels {
        Channels::Rgb => rgb_to_y(img),
        Channels::Y => Ok(img.to_f32()),
    };
    let (a, b) = (to_y(sr)?, to_y(hr)?);
    Ok(PairScore {
        psnr: psnr(&a, &b, shave)?,
        ssim: ssim(&a, &b, shave)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_u8(w: usize, h: usize, c: Channels, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c.count()).map(|_| rng.gen::<u8>()).collect();
        ImageBuffer::from_u8(w, h, c, data).unwrap()
    }

    /// Straight-line PSNR over every sample of the shaved region.
    fn psnr_oracle(a: &ImageBuffer, b: &ImageBuffer, shave: usize) -> f64 {
        let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
        let c = a.channels.count();
        let mut sum = 0.0;
        let mut count = 0.0;
        for row in shave..a.height - shave {
            for col in shave..a.width - shave {
                for ch in 0..c {
                    let i = (row * a.width + col) * c + ch;
                    sum += (x[i] - y[i]).powi(2);
                    count += 1.0;
                }
            }
        }
        -10.0 * (sum / count).log10()
    }

    /// Unoptimized sliding-window SSIM with an explicit 2-D window.
    fn ssim_oracle(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
        let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
        let (w, h) = (a.width, a.height);
        let mut win = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut total = 0.0;
        let mut n = 0.0;
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my, mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / s;
                        let (u, v) = (x[(oy + i) * w + ox + j], y[(oy + i) * w + ox + j]);
                        mx += k * u;
                        my += k * v;
                    }
                }
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / s;
                        let (u, v) = (x[(oy + i) * w + ox + j], y[(oy + i) * w + ox + j]);
                        vx += k * (u - mx) * (u - mx);
                        vy += k * (v - my) * (v - my);
                        cxy += k * (u - mx) * (v - my);
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_u8(8, 8, Channels::Rgb, 1);
        assert_eq!(psnr(&a, &a, 0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_offset() {
        let a = ImageBuffer::from_f32(6, 5, Channels::Y, vec![0.25; 30]).unwrap();
        let b = ImageBuffer::from_f32(6, 5, Channels::Y, vec![0.25 + 0.1; 30]).unwrap();
        // 0.1 is not representable in f32 storage
        assert!((psnr(&a, &b, 1).unwrap() - 20.0).abs() < 1e-5);

        // dyadic offset: MSE = 1/16 exactly
        let c = ImageBuffer::from_f32(6, 5, Channels::Y, vec![0.5; 30]).unwrap();
        assert_eq!(psnr(&a, &c, 1).unwrap(), 10.0 * 16f64.log10());
    }

    #[test]
    fn psnr_matches_oracle_and_is_symmetric() {
        for (seed, shave) in [(2, 0), (3, 2), (4, 4)] {
            let a = random_u8(17, 13, Channels::Rgb, seed);
            let b = random_u8(17, 13, Channels::Rgb, seed + 100);
            let v = psnr(&a, &b, shave).unwrap();
            assert!((v - psnr_oracle(&a, &b, shave)).abs() < 1e-6);
            assert_eq!(v, psnr(&b, &a, shave).unwrap());
        }
    }

    #[test]
    fn psnr_errors() {
        let a = random_u8(8, 8, Channels::Y, 1);
        let b = random_u8(8, 7, Channels::Y, 1);
        assert!(psnr(&a, &b, 0).is_err());
        assert!(psnr(&a, &a, 4).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_u8(32, 20, Channels::Y, 9);
        assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_oracle() {
        let a = random_u8(32, 32, Channels::Y, 5);
        let b = random_u8(32, 32, Channels::Y, 6);
        let v = ssim(&a, &b, 0).unwrap();
        assert!((v - ssim_oracle(&a, &b)).abs() < 1e-6);
        assert!(v > -1.0 && v < 1.0);
    }

    #[test]
    fn ssim_inverted_binary_is_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f32> = (0..24 * 24)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 })
            .collect();
        let inv: Vec<f32> = x.iter().map(|v| 1.0 - v).collect();
        let a = ImageBuffer::from_f32(24, 24, Channels::Y, x).unwrap();
        let b = ImageBuffer::from_f32(24, 24, Channels::Y, inv).unwrap();
        let v = ssim(&a, &b, 0).unwrap();
        assert!((-1.0..0.5).contains(&v), "{v}");
    }

    #[test]
    fn ssim_errors() {
        let a = random_u8(10, 10, Channels::Y, 1);
        assert!(ssim(&a, &a, 0).is_err());
        let rgb = random_u8(16, 16, Channels::Rgb, 1);
        assert!(ssim(&rgb, &rgb, 0).is_err());
    }

    #[test]
    fn u8_and_f32_inputs_agree() {
        let a = random_u8(24, 24, Channels::Rgb, 11);
        let b = random_u8(24, 24, Channels::Rgb, 12);
        let s8 = evaluate_pair(&a, &b, 2).unwrap();
        let s32 = evaluate_pair(&a.to_f32(), &b.to_f32(), 2).unwrap();
        assert!((s8.psnr - s32.psnr).abs() < 1e-4);
        assert!((s8.ssim - s32.ssim).abs() < 1e-6);
    }
}
