use super::same_shape;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a.shape(), b.shape())?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// `d sigmoid` expressed through the forward output `s`.
pub fn sigmoid_backward<T: Scalar>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(out.shape(), data).expect("shapes agree")
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, slope: T, grad: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v >= T::zero() { g } else { g * slope })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("shapes agree")
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: sa,
            rhs: sb,
        });
    }
    let out_shape = sa.with_channels(sa.c + sb.c);
    let (pa, pb) = (sa.c * sa.plane(), sb.c * sb.plane());
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::from_vec(out_shape, data)
}

/// Multiplies each `(n, c)` plane of `x` by `scale[n, c, 0, 0]`.
pub fn scale_channels<T: Scalar>(x: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let expect = Shape::new(s.n, s.c, 1, 1);
    same_shape("scale_channels", expect, scale.shape())?;
    let p = s.plane();
    let mut out = x.clone();
    for (plane, &f) in out.data_mut().chunks_mut(p.max(1)).zip(scale.data()) {
        plane.iter_mut().for_each(|v| *v *= f);
    }
    Ok(out)
}

/// Returns `(grad_x, grad_scale)`.
pub fn scale_channels_backward<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let p = x.shape().plane();
    let gx = scale_channels(grad, scale).expect("shapes checked in forward");
    let mut gs = Tensor::zeros(scale.shape());
    for (i, g) in gs.data_mut().iter_mut().enumerate() {
        let xs = &x.data()[i * p..(i + 1) * p];
        let gr = &grad.data()[i * p..(i + 1) * p];
        *g = xs.iter().zip(gr).map(|(&a, &b)| a * b).sum();
    }
    (gx, gs)
}

/// Multiplies every channel of pixel `(n, y, x)` by `map[n, 0, y, x]`.
pub fn scale_pixels<T: Scalar>(x: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    same_shape("scale_pixels", s.with_channels(1), map.shape())?;
    let p = s.plane();
    let mut out = x.clone();
    for n in 0..s.n {
        let m = map.plane(n, 0);
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            for (v, &f) in out.data_mut()[base..base + p].iter_mut().zip(m) {
                *v *= f;
            }
        }
    }
    Ok(out)
}

pub fn scale_pixels_backward<T: Scalar>(
    x: &Tensor<T>,
    map: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let p = s.plane();
    let gx = scale_pixels(grad, map).expect("shapes checked in forward");
    let mut gm = Tensor::zeros(map.shape());
    for n in 0..s.n {
        let gplane = &mut gm.data_mut()[n * p..(n + 1) * p];
        for c in 0..s.c {
            let xs = x.plane(n, c);
            let gr = grad.plane(n, c);
            for ((g, &a), &b) in gplane.iter_mut().zip(xs).zip(gr) {
                *g += a * b;
            }
        }
    }
    (gx, gm)
}

/// Mean absolute error as a scalar tensor.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", pred.shape(), target.shape())?;
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).abs())
        .sum();
    Ok(Tensor::scalar(total / lit::<T>(pred.numel() as f64)))
}

/// `sign(pred - target) / N`, zero at exact ties.
pub fn l1_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, grad: T) -> Tensor<T> {
    let g = grad / lit::<T>(pred.numel() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                g
            } else if p < t {
                -g
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("shapes agree")
}
