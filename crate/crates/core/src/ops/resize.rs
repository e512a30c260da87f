use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

pub const NEAREST_FACTORS: [usize; 2] = [2, 3];
pub const BILINEAR_FACTORS: [usize; 3] = [2, 3, 4];

fn check_factor(op: &str, factor: usize, allowed: &[usize]) -> Result<()> {
    if !allowed.contains(&factor) {
        return Err(Error::Unsupported(format!(
            "{op} factor {factor} (supported: {allowed:?})"
        )));
    }
    Ok(())
}

/// Replicates each source pixel into a `factor × factor` block.
pub fn resize_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor("nearest", factor, &NEAREST_FACTORS)?;
    let s = x.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let base = (n * s.c + c) * os.plane();
            let dst = &mut out.data_mut()[base..base + os.plane()];
            for oy in 0..os.h {
                let srow = &src[(oy / factor) * s.w..][..s.w];
                let drow = &mut dst[oy * os.w..][..os.w];
                for (ox, d) in drow.iter_mut().enumerate() {
                    *d = srow[ox / factor];
                }
            }
        }
    }
    Ok(out)
}

/// Sums each `factor × factor` block of the upstream gradient.
pub fn resize_nearest_backward<T: Scalar>(
    input: Shape,
    factor: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let gs = grad.shape();
    let mut out = Tensor::zeros(input);
    for n in 0..input.n {
        for c in 0..input.c {
            let g = grad.plane(n, c);
            for y in 0..input.h {
                for x in 0..input.w {
                    let mut acc = T::zero();
                    for dy in 0..factor {
                        let row = &g[(y * factor + dy) * gs.w + x * factor..][..factor];
                        for &v in row {
                            acc += v;
                        }
                    }
                    out.set(n, c, y, x, acc);
                }
            }
        }
    }
    out
}

/// Source taps for one output axis under half-pixel-center sampling
/// (`align_corners = false`): `(i0, i1, w0, w1)` per output index.
pub fn bilinear_taps<T: Scalar>(in_len: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    let inv = 1.0 / factor as f64;
    (0..in_len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) * inv - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
            let w1 = lit::<T>(src - i0 as f64);
            (i0, i1, T::one() - w1, w1)
        })
        .collect()
}

/// Bilinear upscaling with half-pixel centers; borders clamp.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor("bilinear", factor, &BILINEAR_FACTORS)?;
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::dim("resize_bilinear", format!("empty input {s}")));
    }
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let ty = bilinear_taps::<T>(s.h, factor);
    let tx = bilinear_taps::<T>(s.w, factor);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let base = (n * s.c + c) * os.plane();
            let dst = &mut out.data_mut()[base..base + os.plane()];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let r0 = &src[y0 * s.w..][..s.w];
                let r1 = &src[y1 * s.w..][..s.w];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    dst[oy * os.w + ox] =
                        wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Scalar>(
    input: Shape,
    factor: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let gs = grad.shape();
    let ty = bilinear_taps::<T>(input.h, factor);
    let tx = bilinear_taps::<T>(input.w, factor);
    let mut out = Tensor::zeros(input);
    let p = input.plane();
    for n in 0..input.n {
        for c in 0..input.c {
            let g = grad.plane(n, c);
            let base = (n * input.c + c) * p;
            let dst = &mut out.data_mut()[base..base + p];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let v = g[oy * gs.w + ox];
                    dst[y0 * input.w + x0] += v * wy0 * wx0;
                    dst[y0 * input.w + x1] += v * wy0 * wx1;
                    dst[y1 * input.w + x0] += v * wy1 * wx0;
                    dst[y1 * input.w + x1] += v * wy1 * wx1;
                }
            }
        }
    }
    out
}
