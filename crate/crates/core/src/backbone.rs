//! MobileNetV2-style feature extractor built from inverted residual blocks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{ParamStore, Var};
use crate::nn::{self, BatchNorm, Conv2d, Ctx, DepthwiseConv2d};
use crate::rng::Rng;
use crate::tensor::{Real, Result, TensorError};

/// Expansion 1x1 conv, 3x3 depthwise conv, linear 1x1 projection.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InvertedResidualConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub kernel: usize,
    pub use_batch_norm: bool,
}

impl InvertedResidualConfig {
    pub fn new(in_channels: usize, out_channels: usize, expansion: usize, stride: usize) -> Self {
        InvertedResidualConfig { in_channels, out_channels, expansion, stride, kernel: 3, use_batch_norm: true }
    }

    pub fn expanded_channels(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.expansion < 1 || !(1..=2).contains(&self.stride) || self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 {
            return Err(TensorError::Config(format!("invalid inverted residual block {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvBn<L> {
    layer: L,
    bn: Option<BatchNorm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedResidual {
    pub config: InvertedResidualConfig,
    expand: Option<ConvBn<Conv2d>>,
    depthwise: ConvBn<DepthwiseConv2d>,
    project: ConvBn<Conv2d>,
}

fn maybe_bn<T: Real>(store: &mut ParamStore<T>, on: bool, name: &str, channels: usize) -> Result<Option<BatchNorm>> {
    on.then(|| BatchNorm::new(store, name, channels)).transpose()
}

impl InvertedResidual {
    /// With expansion 1 the expansion conv is omitted, as in MobileNetV2.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, config: InvertedResidualConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let bn = config.use_batch_norm;
        let hidden = config.expanded_channels();
        let expand = if config.expansion > 1 {
            Some(ConvBn {
                layer: Conv2d::new(store, &format!("{name}.expand"), 1, config.in_channels, hidden, 1, false, rng)?,
                bn: maybe_bn(store, bn, &format!("{name}.expand_bn"), hidden)?,
            })
        } else {
            None
        };
        let depthwise = ConvBn {
            layer: DepthwiseConv2d::new(store, &format!("{name}.depthwise"), config.kernel, hidden, config.stride, rng)?,
            bn: maybe_bn(store, bn, &format!("{name}.depthwise_bn"), hidden)?,
        };
        let project = ConvBn {
            layer: Conv2d::new(store, &format!("{name}.project"), 1, hidden, config.out_channels, 1, false, rng)?,
            bn: maybe_bn(store, bn, &format!("{name}.project_bn"), config.out_channels)?,
        };
        Ok(InvertedResidual { config, expand, depthwise, project })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        nn::expect_channels(&ctx.tape, x, self.config.in_channels, "inverted residual block")?;
        let mut h = x;
        if let Some(e) = &self.expand {
            h = e.layer.forward(ctx, h)?;
            if let Some(bn) = &e.bn {
                h = bn.forward(ctx, h)?;
            }
            h = ctx.tape.relu6(h);
        }
        h = self.depthwise.layer.forward(ctx, h)?;
        if let Some(bn) = &self.depthwise.bn {
            h = bn.forward(ctx, h)?;
        }
        h = ctx.tape.relu6(h);
        h = self.project.layer.forward(ctx, h)?;
        if let Some(bn) = &self.project.bn {
            h = bn.forward(ctx, h)?;
        }
        if self.config.has_residual() {
            h = ctx.tape.add(h, x)?;
        }
        Ok(h)
    }

    /// Parameter id of the projection kernel.
    pub fn projection_weight(&self) -> crate::autodiff::ParamId {
        self.project.layer.weight
    }
}

/// One row of a MobileNetV2 block table: `repeats` blocks with the given
/// expansion and output channels; only the first block strides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stage {
    pub expansion: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
}

const fn stage(expansion: usize, channels: usize, repeats: usize, stride: usize) -> Stage {
    Stage { expansion, channels, repeats, stride }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BackboneProfile {
    pub name: String,
    pub input_size: usize,
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<Stage>,
    pub final_channels: usize,
    /// Spatial extent the network must end at.
    pub output_grid: usize,
    pub use_batch_norm: bool,
}

impl BackboneProfile {
    /// 224x224x3 to 7x7x1024: the MobileNetV2 table up to the 160-channel
    /// stage, then a 1x1 conv to 1024 channels.
    pub fn paper() -> Self {
        BackboneProfile {
            name: "paper".into(),
            input_size: 224,
            input_channels: 3,
            stem_channels: 32,
            stages: alloc::vec![
                stage(1, 16, 1, 1),
                stage(6, 24, 2, 2),
                stage(6, 32, 3, 2),
                stage(6, 64, 4, 2),
                stage(6, 96, 3, 1),
                stage(6, 160, 3, 2),
            ],
            final_channels: 1024,
            output_grid: 7,
            use_batch_norm: true,
        }
    }

    /// 32x32x3 to 4x4x64 for quick experiments.
    pub fn desk() -> Self {
        BackboneProfile {
            name: "desk".into(),
            input_size: 32,
            input_channels: 3,
            stem_channels: 16,
            stages: alloc::vec![stage(1, 16, 1, 1), stage(6, 24, 2, 2), stage(6, 32, 1, 2)],
            final_channels: 64,
            output_grid: 4,
            use_batch_norm: true,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn blocks(&self) -> Vec<InvertedResidualConfig> {
        let mut blocks = Vec::new();
        let mut cin = self.stem_channels;
        for s in &self.stages {
            for r in 0..s.repeats {
                let stride = if r == 0 { s.stride } else { 1 };
                let mut b = InvertedResidualConfig::new(cin, s.channels, s.expansion, stride);
                b.use_batch_norm = self.use_batch_norm;
                blocks.push(b);
                cin = s.channels;
            }
        }
        blocks
    }

    /// Spatial extent after the stem and every block.
    pub fn reached_grid(&self) -> usize {
        let mut size = self.input_size.div_ceil(2);
        for b in self.blocks() {
            size = size.div_ceil(b.stride);
        }
        size
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.output_grid, self.output_grid, self.final_channels]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub profile: BackboneProfile,
    stem: Conv2d,
    stem_bn: Option<BatchNorm>,
    pub blocks: Vec<InvertedResidual>,
    head: Conv2d,
    head_bn: Option<BatchNorm>,
}

/// Stem 3x3 stride-2 conv, the block list, then a 1x1 conv to the profile's
/// final width.
pub fn build_backbone<T: Real>(store: &mut ParamStore<T>, prefix: &str, profile: &BackboneProfile, rng: &mut Rng) -> Result<Backbone> {
    let reached = profile.reached_grid();
    if reached != profile.output_grid {
        return Err(TensorError::Config(format!(
            "profile `{}` reaches a {reached}x{reached} grid, expected {g}x{g}",
            profile.name,
            g = profile.output_grid
        )));
    }
    let bn = profile.use_batch_norm;
    let stem = Conv2d::new(store, &nn::join(prefix, "stem"), 3, profile.input_channels, profile.stem_channels, 2, false, rng)?;
    let stem_bn = maybe_bn(store, bn, &nn::join(prefix, "stem_bn"), profile.stem_channels)?;
    let blocks = profile
        .blocks()
        .into_iter()
        .enumerate()
        .map(|(i, cfg)| InvertedResidual::new(store, &nn::join(prefix, &format!("block{}", i + 1)), cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    let last = blocks.last().map_or(profile.stem_channels, |b| b.config.out_channels);
    let head = Conv2d::new(store, &nn::join(prefix, "head"), 1, last, profile.final_channels, 1, false, rng)?;
    let head_bn = maybe_bn(store, bn, &nn::join(prefix, "head_bn"), profile.final_channels)?;
    Ok(Backbone { profile: profile.clone(), stem, stem_bn, blocks, head, head_bn })
}

impl Backbone {
    /// `[batch, s, s, 3] -> [batch, grid, grid, final_channels]`
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        nn::expect_channels(&ctx.tape, x, self.profile.input_channels, "backbone")?;
        let mut h = self.stem.forward(ctx, x)?;
        if let Some(bn) = &self.stem_bn {
            h = bn.forward(ctx, h)?;
        }
        h = ctx.tape.relu6(h);
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        h = self.head.forward(ctx, h)?;
        if let Some(bn) = &self.head_bn {
            h = bn.forward(ctx, h)?;
        }
        Ok(ctx.tape.relu6(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_width() {
        let b = InvertedResidualConfig::new(32, 32, 6, 1);
        assert_eq!(b.expanded_channels(), 192);
        assert!(b.has_residual());
        assert!(!InvertedResidualConfig::new(32, 32, 6, 2).has_residual());
        assert!(!InvertedResidualConfig::new(32, 64, 6, 1).has_residual());
        assert!(InvertedResidualConfig::new(32, 32, 0, 1).validate().is_err());
    }

    #[test]
    fn profiles_reach_their_grid() {
        assert_eq!(BackboneProfile::paper().reached_grid(), 7);
        assert_eq!(BackboneProfile::desk().reached_grid(), 4);
        let mut bad = BackboneProfile::desk();
        bad.stages.pop();
        let mut store = ParamStore::<f32>::new();
        let mut rng = crate::rng::seeded(0);
        assert!(build_backbone(&mut store, "b", &bad, &mut rng).is_err());
    }
}
