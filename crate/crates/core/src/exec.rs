//! One forward definition, two ways to run it.
//!
//! Network code is written against [`Exec`]. [`Eager`] evaluates directly on
//! tensors and drops intermediates as soon as they go out of scope;
//! [`Taped`] records every op so the pass can be differentiated.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::nn::{ParamId, ParamStore};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub trait Exec<T: Scalar> {
    type Value: Clone;

    fn shape(&self, v: &Self::Value) -> Shape;
    fn param(&mut self, id: ParamId) -> Self::Value;

    /// Same-padded stride-1 convolution; padding follows from the kernel size.
    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn leaky_relu(&mut self, x: &Self::Value, slope: T) -> Self::Value;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn resize_nearest(&mut self, x: &Self::Value, factor: usize) -> Result<Self::Value>;
    fn resize_bilinear(&mut self, x: &Self::Value, factor: usize) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Self::Value;
    fn channel_stat_pool(&mut self, x: &Self::Value) -> Self::Value;
    fn scale_channels(&mut self, x: &Self::Value, scale: &Self::Value) -> Result<Self::Value>;
    fn scale_pixels(&mut self, x: &Self::Value, map: &Self::Value) -> Result<Self::Value>;
}

/// Direct evaluation. Optionally tallies multiply-accumulates per
/// convolution call, in call order.
pub struct Eager<'a, T> {
    params: &'a ParamStore<T>,
    macs: Option<Vec<u64>>,
}

impl<'a, T: Scalar> Eager<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Eager { params, macs: None }
    }

    pub fn counting(params: &'a ParamStore<T>) -> Self {
        Eager {
            params,
            macs: Some(Vec::new()),
        }
    }

    /// Per-convolution MAC tally recorded so far (empty unless counting).
    pub fn mac_tally(&self) -> &[u64] {
        self.macs.as_deref().unwrap_or(&[])
    }
}

impl<T: Scalar> Exec<T> for Eager<'_, T> {
    type Value = Tensor<T>;

    fn shape(&self, v: &Tensor<T>) -> Shape {
        v.shape()
    }

    fn param(&mut self, id: ParamId) -> Tensor<T> {
        self.params.tensor(id).clone()
    }

    fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let ws = w.shape();
        let out = ops::conv2d(x, w, b, 1, ws.h.saturating_sub(1) / 2)?;
        if let Some(tally) = &mut self.macs {
            let os = out.shape();
            tally.push((ws.n * ws.c * ws.h * ws.w) as u64 * (os.n * os.plane()) as u64);
        }
        Ok(out)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(a, b)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul(a, b)
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Tensor<T> {
        ops::sigmoid(x)
    }

    fn leaky_relu(&mut self, x: &Tensor<T>, slope: T) -> Tensor<T> {
        ops::leaky_relu(x, slope)
    }

    fn concat_channels(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_channels(a, b)
    }

    fn resize_nearest(&mut self, x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
        ops::resize_nearest(x, factor)
    }

    fn resize_bilinear(&mut self, x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
        ops::resize_bilinear(x, factor)
    }

    fn global_avg_pool(&mut self, x: &Tensor<T>) -> Tensor<T> {
        ops::global_avg_pool(x)
    }

    fn channel_stat_pool(&mut self, x: &Tensor<T>) -> Tensor<T> {
        ops::channel_stat_pool(x)
    }

    fn scale_channels(&mut self, x: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
        ops::scale_channels(x, scale)
    }

    fn scale_pixels(&mut self, x: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
        ops::scale_pixels(x, map)
    }
}

/// Records onto a tape. Parameter leaves are created by [`Taped::bind`] in
/// store order; `param_vars` must follow that order.
pub struct Taped<'t, T> {
    tape: &'t mut Tape<T>,
    param_vars: Vec<Var>,
}

impl<'t, T: Scalar> Taped<'t, T> {
    /// Registers every parameter as a gradient-tracked leaf.
    pub fn bind(tape: &'t mut Tape<T>, params: &ParamStore<T>) -> Self {
        let param_vars = params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), true))
            .collect();
        Taped { tape, param_vars }
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.param_vars
    }

    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }
}

impl<T: Scalar> Exec<T> for Taped<'_, T> {
    type Value = Var;

    fn shape(&self, v: &Var) -> Shape {
        self.tape.shape(*v)
    }

    fn param(&mut self, id: ParamId) -> Var {
        self.param_vars[id.index()]
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        self.tape.conv2d(*x, *w, b.copied())
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        self.tape.sigmoid(*x)
    }

    fn leaky_relu(&mut self, x: &Var, slope: T) -> Var {
        self.tape.leaky_relu(*x, slope)
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.concat_channels(*a, *b)
    }

    fn resize_nearest(&mut self, x: &Var, factor: usize) -> Result<Var> {
        self.tape.resize_nearest(*x, factor)
    }

    fn resize_bilinear(&mut self, x: &Var, factor: usize) -> Result<Var> {
        self.tape.resize_bilinear(*x, factor)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Var {
        self.tape.global_avg_pool(*x)
    }

    fn channel_stat_pool(&mut self, x: &Var) -> Var {
        self.tape.channel_stat_pool(*x)
    }

    fn scale_channels(&mut self, x: &Var, scale: &Var) -> Result<Var> {
        self.tape.scale_channels(*x, *scale)
    }

    fn scale_pixels(&mut self, x: &Var, map: &Var) -> Result<Var> {
        self.tape.scale_pixels(*x, *map)
    }
}
