use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

/// Spatial mean per channel, `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = lit::<T>(1.0 / s.plane() as f64);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            let total: T = x.plane(n, c).iter().copied().sum();
            out.set(n, c, 0, 0, total * inv);
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(input: Shape, grad: &Tensor<T>) -> Tensor<T> {
    let inv = lit::<T>(1.0 / input.plane() as f64);
    let mut out = Tensor::zeros(input);
    let p = input.plane();
    for (plane, &g) in out.data_mut().chunks_mut(p.max(1)).zip(grad.data()) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    out
}

/// Per-pixel mean and max across channels, stacked as channels 0 and 1.
pub fn channel_stat_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = lit::<T>(1.0 / s.c as f64);
    let p = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, 2, s.h, s.w));
    for n in 0..s.n {
        let mut mean = vec![T::zero(); p];
        let mut max = x.plane(n, 0).to_vec();
        for c in 0..s.c {
            for ((m, mx), &v) in mean.iter_mut().zip(max.iter_mut()).zip(x.plane(n, c)) {
                *m += v;
                if v > *mx {
                    *mx = v;
                }
            }
        }
        let data = out.data_mut();
        for (d, m) in data[(n * 2) * p..(n * 2 + 1) * p].iter_mut().zip(&mean) {
            *d = *m * inv;
        }
        data[(n * 2 + 1) * p..(n * 2 + 2) * p].copy_from_slice(&max);
    }
    out
}

/// Mean gradient spreads evenly; max gradient goes to the first channel
/// attaining the maximum.
pub fn channel_stat_pool_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = lit::<T>(1.0 / s.c as f64);
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let gmean = grad.plane(n, 0);
        let gmax = grad.plane(n, 1);
        for i in 0..p {
            let mut arg = 0;
            let mut best = x.data()[(n * s.c) * p + i];
            for c in 1..s.c {
                let v = x.data()[(n * s.c + c) * p + i];
                if v > best {
                    best = v;
                    arg = c;
                }
            }
            for c in 0..s.c {
                let mut g = gmean[i] * inv;
                if c == arg {
                    g += gmax[i];
                }
                out.data_mut()[(n * s.c + c) * p + i] = g;
            }
        }
    }
    out
}
