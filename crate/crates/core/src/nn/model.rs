use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{Block, ResidualBlock, ScpaBias, ScpaBlock, UpaBlock};
use super::layers::{
    Activation, Attention, ChannelAttention, Conv2d, Grid, LayerBuilder, LayerCost, LayerKind,
    PixelAttention, SpatialAttention,
};
use super::params::{ParamLayout, ParamStore};
use crate::error::{Error, Result};
use crate::exec::{Eager, Exec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SUPPORTED_SCALES: [usize; 3] = [2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockType {
    Scpa,
    Rb,
    RbCa,
    RbSa,
    RbPa,
}

impl BlockType {
    pub const ALL: [BlockType; 5] = [
        BlockType::Scpa,
        BlockType::Rb,
        BlockType::RbCa,
        BlockType::RbSa,
        BlockType::RbPa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockType::Scpa => "scpa",
            BlockType::Rb => "rb",
            BlockType::RbCa => "rb-ca",
            BlockType::RbSa => "rb-sa",
            BlockType::RbPa => "rb-pa",
        }
    }

    /// Block count used when this block type fills the trunk of a full-size
    /// model: 16 SC-PA blocks or 8 residual blocks.
    pub fn default_count(self) -> usize {
        match self {
            BlockType::Scpa => 16,
            _ => 8,
        }
    }
}

impl FromStr for BlockType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        BlockType::ALL
            .into_iter()
            .find(|b| b.as_str() == norm || (norm == "sc-pa" && *b == BlockType::Scpa))
            .ok_or_else(|| Error::Config(format!("unknown block type {s:?}")))
    }
}

/// Which convolution classes carry a bias term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiasPolicy {
    /// Head, trunk, U-PA convs and tail.
    pub outer: bool,
    /// SC-PA split and fuse 1×1 convs.
    pub scpa_split_fuse: bool,
    /// SC-PA 3×3 convs in both branches.
    pub scpa_conv3: bool,
    /// Every attention conv (PA, CA, SA).
    pub attention: bool,
    /// The two 3×3 convs of the residual-block variants.
    pub residual: bool,
}

impl Default for BiasPolicy {
    fn default() -> Self {
        BiasPolicy {
            outer: true,
            scpa_split_fuse: false,
            scpa_conv3: false,
            attention: true,
            residual: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub scale: usize,
    pub block_type: BlockType,
    pub num_blocks: usize,
    /// Trunk width.
    pub nf: usize,
    /// Reconstruction width.
    pub unf: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: BiasPolicy,
    pub activation: Activation,
    /// Activations inside SC-PA (after the split convs and each branch).
    pub scpa_activation: bool,
    /// Pixel attention inside SC-PA blocks.
    pub pa_in_blocks: bool,
    /// Pixel attention inside U-PA blocks.
    pub pa_in_upsampler: bool,
    pub ca_reduction: usize,
    pub sa_kernel: usize,
    /// Init gain of the final conv.
    pub tail_gain: f64,
}

impl ModelConfig {
    /// Full-size PAN at the given scale.
    pub fn pan(scale: usize) -> Self {
        ModelConfig {
            scale,
            block_type: BlockType::Scpa,
            num_blocks: 16,
            nf: 40,
            unf: 24,
            in_channels: 3,
            out_channels: 3,
            bias: BiasPolicy::default(),
            activation: Activation::LeakyRelu(0.2),
            scpa_activation: true,
            pa_in_blocks: true,
            pa_in_upsampler: true,
            ca_reduction: 2,
            sa_kernel: 7,
            tail_gain: 0.1,
        }
    }

    /// Full-size model whose trunk uses `block_type`, at its default count.
    pub fn with_blocks(scale: usize, block_type: BlockType) -> Self {
        ModelConfig {
            block_type,
            num_blocks: block_type.default_count(),
            ..ModelConfig::pan(scale)
        }
    }

    /// Reduced widths for fast tests and desk-scale training.
    pub fn tiny(scale: usize, nf: usize, unf: usize, num_blocks: usize) -> Self {
        ModelConfig {
            nf,
            unf,
            num_blocks,
            ..ModelConfig::pan(scale)
        }
    }

    pub fn upsample_factors(&self) -> Result<Vec<usize>> {
        match self.scale {
            2 => Ok(vec![2]),
            3 => Ok(vec![3]),
            4 => Ok(vec![2, 2]),
            s => Err(Error::Unsupported(format!(
                "unsupported scale {s} (supported: {SUPPORTED_SCALES:?})"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.upsample_factors()?;
        if self.nf == 0 || self.unf == 0 {
            return Err(Error::Config("widths nf and unf must be positive".into()));
        }
        if self.block_type == BlockType::Scpa && self.nf % 2 != 0 {
            return Err(Error::Config(format!(
                "nf must be even for SC-PA blocks, got {}",
                self.nf
            )));
        }
        if self.in_channels == 0 || self.in_channels != self.out_channels {
            return Err(Error::Config(format!(
                "bilinear skip needs in_channels == out_channels, got {} and {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// PAN architecture: head conv, block trunk, trunk conv, U-PA reconstruction,
/// tail conv, plus a bilinear skip from the input.
#[derive(Clone, Debug)]
pub struct Pan {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub head: Conv2d,
    pub blocks: Vec<Block>,
    pub trunk: Conv2d,
    pub upsamplers: Vec<UpaBlock>,
    pub tail: Conv2d,
}

impl Pan {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let factors = config.upsample_factors()?;
        let mut layout = ParamLayout::new();
        let mut b = LayerBuilder {
            layout: &mut layout,
            init_slope: config.activation.slope(),
        };
        let bias = config.bias;
        let act = config.activation;

        let head = b.conv("head".into(), config.in_channels, config.nf, 3, bias.outer);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for i in 0..config.num_blocks {
            let name = format!("body.{i}");
            let block = match config.block_type {
                BlockType::Scpa => Block::Scpa(ScpaBlock::build(
                    &mut b,
                    &name,
                    config.nf,
                    config.pa_in_blocks,
                    ScpaBias {
                        split_fuse: bias.scpa_split_fuse,
                        conv3: bias.scpa_conv3,
                        attention: bias.attention,
                    },
                    config.scpa_activation.then_some(act),
                )?),
                kind => {
                    let nf = config.nf;
                    let attention = |b: &mut LayerBuilder<'_>| -> Result<Option<Attention>> {
                        Ok(match kind {
                            BlockType::RbCa => Some(Attention::Channel(ChannelAttention::build(
                                b,
                                &format!("{name}.ca"),
                                nf,
                                config.ca_reduction,
                                bias.attention,
                            )?)),
                            BlockType::RbSa => Some(Attention::Spatial(SpatialAttention::build(
                                b,
                                format!("{name}.sa"),
                                config.sa_kernel,
                                bias.attention,
                            )?)),
                            BlockType::RbPa => Some(Attention::Pixel(PixelAttention::build(
                                b,
                                format!("{name}.pa"),
                                nf,
                                bias.attention,
                            ))),
                            _ => None,
                        })
                    };
                    Block::Residual(ResidualBlock::build(
                        &mut b,
                        &name,
                        nf,
                        bias.residual,
                        act,
                        attention,
                    )?)
                }
            };
            blocks.push(block);
        }
        let trunk = b.conv("trunk".into(), config.nf, config.nf, 3, bias.outer);
        let mut upsamplers = Vec::new();
        let mut in_c = config.nf;
        for (j, &f) in factors.iter().enumerate() {
            upsamplers.push(UpaBlock::build(
                &mut b,
                &format!("up.{j}"),
                f,
                in_c,
                config.unf,
                config.pa_in_upsampler,
                bias.outer,
                bias.attention,
                act,
            )?);
            in_c = config.unf;
        }
        let tail = b.conv_with_gain(
            "tail".into(),
            config.unf,
            config.out_channels,
            3,
            bias.outer,
            config.tail_gain,
        );
        Ok(Pan {
            config,
            layout,
            head,
            blocks,
            trunk,
            upsamplers,
            tail,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// `I_SR = reconstruction(trunk(head(I_LR))) + bilinear(I_LR)`.
    pub fn forward<T: Scalar, E: Exec<T>>(&self, exec: &mut E, x: &E::Value) -> Result<E::Value> {
        let s = exec.shape(x);
        if s.c != self.config.in_channels {
            return Err(Error::dim(
                "pan",
                format!(
                    "expected {} input channels, got input {s}",
                    self.config.in_channels
                ),
            ));
        }
        let h = self.head.forward(exec, x)?;
        let mut h = self.config.activation.apply(exec, &h);
        for block in &self.blocks {
            h = block.forward(exec, &h)?;
        }
        let mut h = self.trunk.forward(exec, &h)?;
        for up in &self.upsamplers {
            h = up.forward(exec, &h)?;
        }
        let out = self.tail.forward(exec, &h)?;
        let skip = exec.resize_bilinear(x, self.config.scale)?;
        exec.add(&out, &skip)
    }

    /// Every layer in execution order, with the grid it runs on.
    pub fn layer_costs(&self) -> Vec<LayerCost> {
        let lr = Grid::Spatial { upscale: 1 };
        let mut out = vec![self.head.cost(lr)];
        for b in &self.blocks {
            b.costs(lr, &mut out);
        }
        out.push(self.trunk.cost(lr));
        let mut g = 1;
        for up in &self.upsamplers {
            up.costs(g, &mut out);
            g *= up.factor;
        }
        let hr = Grid::Spatial {
            upscale: self.config.scale,
        };
        out.push(self.tail.cost(hr));
        out.push(LayerCost {
            name: "skip.bilinear".into(),
            kind: LayerKind::Resize {
                channels: self.config.in_channels,
                factor: self.config.scale,
            },
            grid: hr,
        });
        out
    }

    /// One line per parameterized layer: name, weight shape, parameter count.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for row in self.layer_costs() {
            if let LayerKind::Conv {
                in_c,
                out_c,
                k,
                bias,
            } = row.kind
            {
                let shape = format!("{out_c}x{in_c}x{k}x{k}{}", if bias { "+b" } else { "" });
                let _ = writeln!(s, "{:<28} {:<16} {:>8}", row.name, shape, row.params());
            }
        }
        let _ = writeln!(s, "{:<28} {:<16} {:>8}", "total", "", self.param_count());
        s
    }
}

/// Architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub arch: Pan,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Pan::build(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamStore::initialize(&arch.layout, &mut rng);
        Ok(Model { arch, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let arch = Pan::build(config)?;
        let params = ParamStore::zeros(&arch.layout);
        Ok(Model { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut exec = Eager::new(&self.params);
        self.arch.forward(&mut exec, x)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}
