use super::layers::{
    Activation, Attention, Conv2d, Grid, LayerBuilder, LayerCost, LayerKind, PixelAttention,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::scalar::Scalar;

/// `y = x + attention(conv(act(conv(x))))`, attention optional.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub attention: Option<Attention>,
    pub activation: Activation,
}

impl ResidualBlock {
    pub(crate) fn build(
        b: &mut LayerBuilder<'_>,
        name: &str,
        width: usize,
        bias: bool,
        activation: Activation,
        attention: impl FnOnce(&mut LayerBuilder<'_>) -> Result<Option<Attention>>,
    ) -> Result<Self> {
        let conv1 = b.conv(format!("{name}.conv1"), width, width, 3, bias);
        let conv2 = b.conv(format!("{name}.conv2"), width, width, 3, bias);
        let attention = attention(b)?;
        Ok(ResidualBlock {
            conv1,
            conv2,
            attention,
            activation,
        })
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let h = self.conv1.forward(exec, x)?;
        let h = self.activation.apply(exec, &h);
        let mut h = self.conv2.forward(exec, &h)?;
        if let Some(a) = &self.attention {
            h = a.forward(exec, &h)?;
        }
        exec.add(x, &h)
    }

    fn costs(&self, grid: Grid, out: &mut Vec<LayerCost>) {
        out.push(self.conv1.cost(grid));
        out.push(self.conv2.cost(grid));
        if let Some(a) = &self.attention {
            a.costs(grid, out);
        }
    }
}

/// Self-calibrated block with pixel attention.
///
/// The input is projected by two 1×1 convs into half-width branches. The
/// attention branch gates its first 3×3 conv with `sigmoid(conv1×1(x'))` and
/// follows with a second 3×3 conv; the plain branch runs one 3×3 conv. The
/// branches are concatenated, fused by a 1×1 conv and added to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct ScpaBlock {
    pub split_upper: Conv2d,
    pub split_lower: Conv2d,
    pub attention: Option<Conv2d>,
    pub upper_conv1: Conv2d,
    pub upper_conv2: Conv2d,
    pub lower_conv: Conv2d,
    pub fuse: Conv2d,
    /// Activation after the split convs and after each branch, when set.
    pub activation: Option<Activation>,
}

pub(crate) struct ScpaBias {
    pub split_fuse: bool,
    pub conv3: bool,
    pub attention: bool,
}

impl ScpaBlock {
    pub(crate) fn build(
        b: &mut LayerBuilder<'_>,
        name: &str,
        width: usize,
        with_attention: bool,
        bias: ScpaBias,
        activation: Option<Activation>,
    ) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return Err(Error::Config(format!(
                "SC-PA width must be even and positive, got {width}"
            )));
        }
        let half = width / 2;
        let split_upper = b.conv(
            format!("{name}.split_upper"),
            width,
            half,
            1,
            bias.split_fuse,
        );
        let split_lower = b.conv(
            format!("{name}.split_lower"),
            width,
            half,
            1,
            bias.split_fuse,
        );
        let attention = with_attention
            .then(|| b.conv(format!("{name}.attention"), half, half, 1, bias.attention));
        let upper_conv1 = b.conv(format!("{name}.upper_conv1"), half, half, 3, bias.conv3);
        let upper_conv2 = b.conv(format!("{name}.upper_conv2"), half, half, 3, bias.conv3);
        let lower_conv = b.conv(format!("{name}.lower_conv"), half, half, 3, bias.conv3);
        let fuse = b.conv(format!("{name}.fuse"), width, width, 1, bias.split_fuse);
        Ok(ScpaBlock {
            split_upper,
            split_lower,
            attention,
            upper_conv1,
            upper_conv2,
            lower_conv,
            fuse,
            activation,
        })
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let act = |exec: &mut E, v: E::Value| match self.activation {
            Some(a) => a.apply(exec, &v),
            None => v,
        };
        let upper = self.split_upper.forward(exec, x)?;
        let upper = act(exec, upper);
        let lower = self.split_lower.forward(exec, x)?;
        let lower = act(exec, lower);

        let mut u = self.upper_conv1.forward(exec, &upper)?;
        if let Some(att) = &self.attention {
            let logits = att.forward(exec, &upper)?;
            let gate = exec.sigmoid(&logits);
            u = exec.mul(&u, &gate)?;
        }
        let u = self.upper_conv2.forward(exec, &u)?;
        let u = act(exec, u);
        let l = self.lower_conv.forward(exec, &lower)?;
        let l = act(exec, l);

        let cat = exec.concat_channels(&u, &l)?;
        let fused = self.fuse.forward(exec, &cat)?;
        exec.add(x, &fused)
    }

    fn costs(&self, grid: Grid, out: &mut Vec<LayerCost>) {
        out.push(self.split_upper.cost(grid));
        out.push(self.split_lower.cost(grid));
        if let Some(a) = &self.attention {
            out.push(a.cost(grid));
        }
        for c in [
            &self.upper_conv1,
            &self.upper_conv2,
            &self.lower_conv,
            &self.fuse,
        ] {
            out.push(c.cost(grid));
        }
    }
}

/// Reconstruction stage: nearest upsample, conv, pixel attention, conv.
#[derive(Clone, Debug, PartialEq)]
pub struct UpaBlock {
    pub name: String,
    pub factor: usize,
    pub conv: Conv2d,
    pub attention: Option<PixelAttention>,
    pub hr_conv: Conv2d,
    pub activation: Activation,
}

impl UpaBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        b: &mut LayerBuilder<'_>,
        name: &str,
        factor: usize,
        in_c: usize,
        width: usize,
        with_attention: bool,
        conv_bias: bool,
        attention_bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        if !crate::ops::NEAREST_FACTORS.contains(&factor) {
            return Err(Error::Unsupported(format!("U-PA factor {factor}")));
        }
        let conv = b.conv(format!("{name}.conv"), in_c, width, 3, conv_bias);
        let attention = with_attention
            .then(|| PixelAttention::build(b, format!("{name}.pa"), width, attention_bias));
        let hr_conv = b.conv(format!("{name}.hr_conv"), width, width, 3, conv_bias);
        Ok(UpaBlock {
            name: name.to_string(),
            factor,
            conv,
            attention,
            hr_conv,
            activation,
        })
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let up = exec.resize_nearest(x, self.factor)?;
        let mut h = self.conv.forward(exec, &up)?;
        if let Some(pa) = &self.attention {
            h = pa.forward(exec, &h)?;
        }
        let h = self.activation.apply(exec, &h);
        let h = self.hr_conv.forward(exec, &h)?;
        Ok(self.activation.apply(exec, &h))
    }

    /// `grid_in` is the upscale of the input grid relative to LR.
    pub(crate) fn costs(&self, grid_in: usize, out: &mut Vec<LayerCost>) {
        let grid = Grid::Spatial {
            upscale: grid_in * self.factor,
        };
        out.push(LayerCost {
            name: format!("{}.nearest", self.name),
            kind: LayerKind::Resize {
                channels: self.conv.in_c,
                factor: self.factor,
            },
            grid,
        });
        out.push(self.conv.cost(grid));
        if let Some(pa) = &self.attention {
            out.push(pa.conv.cost(grid));
        }
        out.push(self.hr_conv.cost(grid));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Scpa(ScpaBlock),
    Residual(ResidualBlock),
}

impl Block {
    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        match self {
            Block::Scpa(b) => b.forward(exec, x),
            Block::Residual(b) => b.forward(exec, x),
        }
    }

    pub(crate) fn costs(&self, grid: Grid, out: &mut Vec<LayerCost>) {
        match self {
            Block::Scpa(b) => b.costs(grid, out),
            Block::Residual(b) => b.costs(grid, out),
        }
    }
}
