use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const SUPPORTED_KERNELS: [usize; 4] = [1, 3, 5, 7];

/// Gradients of a convolution with respect to each of its operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Validates operands and returns `(output shape, kernel size, padding)`.
pub fn check_conv(
    input: Shape,
    weight: Shape,
    bias: Option<Shape>,
    stride: usize,
    padding: usize,
) -> Result<(Shape, usize, usize)> {
    let k = weight.h;
    if weight.w != k {
        return Err(Error::Unsupported(format!(
            "non-square kernel {}x{}",
            weight.h, weight.w
        )));
    }
    if !SUPPORTED_KERNELS.contains(&k) {
        return Err(Error::Unsupported(format!("kernel size {k}")));
    }
    if stride != 1 {
        return Err(Error::Unsupported(format!("stride {stride}")));
    }
    if padding != (k - 1) / 2 {
        return Err(Error::Unsupported(format!(
            "padding {padding} for kernel {k} (only size-preserving padding {} is supported)",
            (k - 1) / 2
        )));
    }
    if weight.c != input.c {
        return Err(Error::dim(
            "conv2d",
            format!(
                "weight {weight} expects {} input channels, input is {input}",
                weight.c
            ),
        ));
    }
    if let Some(b) = bias {
        if b != Shape::new(weight.n, 1, 1, 1) {
            return Err(Error::dim(
                "conv2d",
                format!("bias {b} does not match {} output channels", weight.n),
            ));
        }
    }
    Ok((Shape::new(input.n, weight.n, input.h, input.w), k, padding))
}

/// Valid `[lo, hi)` range of output coordinates whose tap at offset `d`
/// (relative, may be negative) lands inside `0..len`. `None` when the tap
/// misses the input entirely, which happens once the kernel is wider than
/// the image.
#[inline]
fn valid_range(len: usize, d: isize) -> Option<(usize, usize)> {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo < hi).then_some((lo, hi))
}

/// Stride-1 same-padded cross-correlation (no kernel flip), zero padding.
///
/// Per output cell the accumulation order is: bias, then input channel,
/// kernel row, kernel column.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (out_shape, k, pad) = check_conv(
        input.shape(),
        weight.shape(),
        bias.map(|b| b.shape()),
        stride,
        padding,
    )?;
    let is = input.shape();
    let (h, w) = (is.h, is.w);
    let mut out = Tensor::zeros(out_shape);
    let wdata = weight.data();
    let idata = input.data();
    let plane = h * w;
    let kk = k * k;
    for n in 0..is.n {
        for oc in 0..out_shape.c {
            let obase = (n * out_shape.c + oc) * plane;
            let oplane = &mut out.data_mut()[obase..obase + plane];
            if let Some(b) = bias {
                let bv = b.data()[oc];
                oplane.iter_mut().for_each(|v| *v = bv);
            }
            for ic in 0..is.c {
                let iplane = &idata[(n * is.c + ic) * plane..][..plane];
                let wk = &wdata[(oc * is.c + ic) * kk..][..kk];
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    let Some((ylo, yhi)) = valid_range(h, dy) else {
                        continue;
                    };
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let dx = kx as isize - pad as isize;
                        let Some((xlo, xhi)) = valid_range(w, dx) else {
                            continue;
                        };
                        for y in ylo..yhi {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut oplane[y * w + xlo..y * w + xhi];
                            let sx0 = (xlo as isize + dx) as usize;
                            let irow = &iplane[sy * w + sx0..sy * w + sx0 + (xhi - xlo)];
                            for (o, &i) in orow.iter_mut().zip(irow) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let (out_shape, k, pad) = check_conv(is, ws, None, 1, padding)?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            lhs: out_shape,
            rhs: grad_out.shape(),
        });
    }
    let (h, w) = (is.h, is.w);
    let plane = h * w;
    let kk = k * k;
    let go = grad_out.data();
    let idata = input.data();
    let wdata = weight.data();

    let mut gi = Tensor::zeros(is);
    for n in 0..is.n {
        for ic in 0..is.c {
            let gbase = (n * is.c + ic) * plane;
            let gplane = &mut gi.data_mut()[gbase..gbase + plane];
            for oc in 0..ws.n {
                let gop = &go[(n * ws.n + oc) * plane..][..plane];
                let wk = &wdata[(oc * is.c + ic) * kk..][..kk];
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    let Some((ylo, yhi)) = valid_range(h, dy) else {
                        continue;
                    };
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let dx = kx as isize - pad as isize;
                        let Some((xlo, xhi)) = valid_range(w, dx) else {
                            continue;
                        };
                        for y in ylo..yhi {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (xlo as isize + dx) as usize;
                            let grow = &mut gplane[sy * w + sx0..sy * w + sx0 + (xhi - xlo)];
                            let orow = &gop[y * w + xlo..y * w + xhi];
                            for (g, &o) in grow.iter_mut().zip(orow) {
                                *g += wv * o;
                            }
                        }
                    }
                }
            }
        }
    }

    let mut gw = Tensor::zeros(ws);
    for oc in 0..ws.n {
        for ic in 0..is.c {
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let Some((ylo, yhi)) = valid_range(h, dy) else {
                    continue;
                };
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let Some((xlo, xhi)) = valid_range(w, dx) else {
                        continue;
                    };
                    let mut acc = T::zero();
                    for n in 0..is.n {
                        let gop = &go[(n * ws.n + oc) * plane..][..plane];
                        let iplane = &idata[(n * is.c + ic) * plane..][..plane];
                        for y in ylo..yhi {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (xlo as isize + dx) as usize;
                            let irow = &iplane[sy * w + sx0..sy * w + sx0 + (xhi - xlo)];
                            let orow = &gop[y * w + xlo..y * w + xhi];
                            for (&o, &i) in orow.iter().zip(irow) {
                                acc += o * i;
                            }
                        }
                    }
                    gw.data_mut()[(oc * is.c + ic) * kk + ky * k + kx] = acc;
                }
            }
        }
    }

    let gb = has_bias.then(|| {
        let mut gb = Tensor::zeros(Shape::new(ws.n, 1, 1, 1));
        for oc in 0..ws.n {
            let mut acc = T::zero();
            for n in 0..is.n {
                acc += go[(n * ws.n + oc) * plane..][..plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            gb.data_mut()[oc] = acc;
        }
        gb
    });

    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six nested loops, straight from the definition.
    fn naive_conv(
        input: &Tensor<f64>,
        weight: &Tensor<f64>,
        bias: Option<&Tensor<f64>>,
    ) -> Tensor<f64> {
        let is = input.shape();
        let ws = weight.shape();
        let pad = (ws.h / 2) as isize;
        let mut out = Tensor::zeros(Shape::new(is.n, ws.n, is.h, is.w));
        for n in 0..is.n {
            for oc in 0..ws.n {
                for y in 0..is.h {
                    for x in 0..is.w {
                        let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                        for ic in 0..is.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let sy = y as isize + ky as isize - pad;
                                    let sx = x as isize + kx as isize - pad;
                                    if sy < 0
                                        || sx < 0
                                        || sy >= is.h as isize
                                        || sx >= is.w as isize
                                    {
                                        continue;
                                    }
                                    acc += weight.at(oc, ic, ky, kx)
                                        * input.at(n, ic, sy as usize, sx as usize);
                                }
                            }
                        }
                        out.set(n, oc, y, x, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kernel_wider_than_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(1, 1), (2, 5), (3, 1)] {
            let x = Tensor::<f64>::uniform(Shape::new(1, 2, h, w), -1.0, 1.0, &mut rng);
            let k = Tensor::<f64>::uniform(Shape::new(3, 2, 7, 7), -1.0, 1.0, &mut rng);
            let y = conv2d(&x, &k, None, 1, 3).unwrap();
            assert!(y.max_abs_diff(&naive_conv(&x, &k, None)) < 1e-12);
            let g = conv2d_backward(&x, &k, false, 3, &Tensor::full(y.shape(), 1.0)).unwrap();
            assert_eq!(g.input.shape(), x.shape());
        }
    }

    #[test]
    fn identity_1x1() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn ones_3x3_zero_padding() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.);
        for (cy, cx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, cy, cx), 4.);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::uniform(Shape::new(2, 3, 5, 4), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(Shape::new(4, 3, 3, 3), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(Shape::new(4, 1, 1, 1), -1.0, 1.0, &mut rng);
        let oracle = naive_conv(&x, &w, Some(&b));
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        assert!(y.max_abs_diff(&oracle) < 1e-12);

        let y32 = conv2d(
            &x.cast::<f32>(),
            &w.cast::<f32>(),
            Some(&b.cast::<f32>()),
            1,
            1,
        )
        .unwrap();
        assert!(y32.cast::<f64>().max_abs_diff(&oracle) < 1e-5);
    }

    #[test]
    fn rejects_bad_configs() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(
            conv2d(&x, &w, None, 1, 1),
            Err(Error::Dimension { .. })
        ));
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        assert!(matches!(
            conv2d(&x, &w, None, 2, 1),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            conv2d(&x, &w, None, 1, 0),
            Err(Error::Unsupported(_))
        ));
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(
            conv2d(&x, &w, None, 1, 0),
            Err(Error::Unsupported(_))
        ));
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let b = Tensor::<f32>::zeros(Shape::new(2, 1, 1, 1));
        assert!(conv2d(&x, &w, Some(&b), 1, 1).is_err());
    }

    #[test]
    fn backward_matches_naive_adjoint() {
        // <conv(x), g> = <x, conv^T(g)>: check each gradient against the
        // inner product identity, computed with the naive forward.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(Shape::new(2, 3, 4, 5), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(Shape::new(2, 3, 3, 3), -1.0, 1.0, &mut rng);
        let g = Tensor::<f64>::uniform(Shape::new(2, 2, 4, 5), -1.0, 1.0, &mut rng);
        let grads = conv2d_backward(&x, &w, true, 1, &g).unwrap();
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(p, q)| p * q)
                .sum::<f64>()
        };
        let y = naive_conv(&x, &w, None);
        assert!((dot(&y, &g) - dot(&x, &grads.input)).abs() < 1e-10);
        assert!((dot(&y, &g) - dot(&w, &grads.weight)).abs() < 1e-10);
        assert!((grads.bias.unwrap().sum() - g.sum()).abs() < 1e-12);
    }
}
