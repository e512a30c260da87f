use super::params::{InitScheme, ParamId, ParamLayout};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::scalar::{lit, Scalar};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
}

impl Activation {
    pub fn slope(self) -> f64 {
        match self {
            Activation::LeakyRelu(s) => s,
            Activation::Relu => 0.0,
        }
    }

    pub fn apply<T: Scalar, E: Exec<T>>(self, exec: &mut E, x: &E::Value) -> E::Value {
        exec.leaky_relu(x, lit(self.slope()))
    }
}

/// Which grid a layer executes on, relative to the LR input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    /// LR grid scaled by `upscale` in each dimension.
    Spatial { upscale: usize },
    /// Globally pooled `1×1` features.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_c: usize,
        out_c: usize,
        k: usize,
        bias: bool,
    },
    Resize {
        channels: usize,
        factor: usize,
    },
}

/// Static description of one layer for cost accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub grid: Grid,
}

impl LayerCost {
    pub fn params(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_c,
                out_c,
                k,
                bias,
            } => out_c * in_c * k * k + if bias { out_c } else { 0 },
            LayerKind::Resize { .. } => 0,
        }
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> u64 {
        match self.kind {
            LayerKind::Conv { in_c, out_c, k, .. } => (out_c * in_c * k * k) as u64,
            LayerKind::Resize { .. } => 0,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv { out_c, .. } => out_c,
            LayerKind::Resize { channels, .. } => channels,
        }
    }
}

/// Registers layers into a [`ParamLayout`] with consistent naming and init.
pub(crate) struct LayerBuilder<'a> {
    pub layout: &'a mut ParamLayout,
    pub init_slope: f64,
}

impl LayerBuilder<'_> {
    pub fn conv(
        &mut self,
        name: String,
        in_c: usize,
        out_c: usize,
        k: usize,
        bias: bool,
    ) -> Conv2d {
        self.conv_with_gain(name, in_c, out_c, k, bias, 1.0)
    }

    pub fn conv_with_gain(
        &mut self,
        name: String,
        in_c: usize,
        out_c: usize,
        k: usize,
        bias: bool,
        gain: f64,
    ) -> Conv2d {
        let weight = self.layout.add(
            format!("{name}.weight"),
            Shape::new(out_c, in_c, k, k),
            InitScheme::KaimingUniform {
                gain,
                slope: self.init_slope,
            },
        );
        let bias = bias.then(|| {
            self.layout.add(
                format!("{name}.bias"),
                Shape::new(out_c, 1, 1, 1),
                InitScheme::Zeros,
            )
        });
        Conv2d {
            name,
            in_c,
            out_c,
            k,
            weight,
            bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let w = exec.param(self.weight);
        let b = self.bias.map(|b| exec.param(b));
        exec.conv2d(x, &w, b.as_ref())
    }

    pub fn params(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k + if self.bias.is_some() { self.out_c } else { 0 }
    }

    pub(crate) fn cost(&self, grid: Grid) -> LayerCost {
        LayerCost {
            name: self.name.clone(),
            kind: LayerKind::Conv {
                in_c: self.in_c,
                out_c: self.out_c,
                k: self.k,
                bias: self.bias.is_some(),
            },
            grid,
        }
    }
}

/// `x · sigmoid(conv1×1(x))`: a full `C×H×W` gating map.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelAttention {
    pub conv: Conv2d,
}

impl PixelAttention {
    pub(crate) fn build(
        b: &mut LayerBuilder<'_>,
        name: String,
        channels: usize,
        bias: bool,
    ) -> Self {
        PixelAttention {
            conv: b.conv(name, channels, channels, 1, bias),
        }
    }

    /// The `(n, c, h, w)` attention map.
    pub fn attention<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let logits = self.conv.forward(exec, x)?;
        Ok(exec.sigmoid(&logits))
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let a = self.attention(exec, x)?;
        exec.mul(&a, x)
    }
}

/// Squeeze-and-excitation style gating with one weight per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl ChannelAttention {
    pub(crate) fn build(
        b: &mut LayerBuilder<'_>,
        name: &str,
        channels: usize,
        reduction: usize,
        bias: bool,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "channel attention: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let mid = channels / reduction;
        Ok(ChannelAttention {
            reduce: b.conv(format!("{name}.reduce"), channels, mid, 1, bias),
            expand: b.conv(format!("{name}.expand"), mid, channels, 1, bias),
        })
    }

    /// The `(n, c, 1, 1)` attention vector.
    pub fn attention<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let pooled = exec.global_avg_pool(x);
        let h = self.reduce.forward(exec, &pooled)?;
        let h = Activation::Relu.apply(exec, &h);
        let logits = self.expand.forward(exec, &h)?;
        Ok(exec.sigmoid(&logits))
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let a = self.attention(exec, x)?;
        exec.scale_channels(x, &a)
    }
}

/// CBAM-style gating with one weight per pixel, from the channel mean and
/// max.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub(crate) fn build(
        b: &mut LayerBuilder<'_>,
        name: String,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        if kernel % 2 == 0 || kernel > 7 {
            return Err(Error::Config(format!(
                "spatial attention kernel {kernel} must be odd and at most 7"
            )));
        }
        Ok(SpatialAttention {
            conv: b.conv(name, 2, 1, kernel, bias),
        })
    }

    /// The `(n, 1, h, w)` attention map.
    pub fn attention<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let stats = exec.channel_stat_pool(x);
        let logits = self.conv.forward(exec, &stats)?;
        Ok(exec.sigmoid(&logits))
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let a = self.attention(exec, x)?;
        exec.scale_pixels(x, &a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Attention {
    Channel(ChannelAttention),
    Spatial(SpatialAttention),
    Pixel(PixelAttention),
}

impl Attention {
    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        match self {
            Attention::Channel(a) => a.forward(exec, x),
            Attention::Spatial(a) => a.forward(exec, x),
            Attention::Pixel(a) => a.forward(exec, x),
        }
    }

    pub(crate) fn costs(&self, grid: Grid, out: &mut Vec<LayerCost>) {
        match self {
            Attention::Channel(a) => {
                out.push(a.reduce.cost(Grid::Pooled));
                out.push(a.expand.cost(Grid::Pooled));
            }
            Attention::Spatial(a) => out.push(a.conv.cost(grid)),
            Attention::Pixel(a) => out.push(a.conv.cost(grid)),
        }
    }
}
