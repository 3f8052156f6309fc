//! The three model variants compared in the ablation: the hybrid MobileCaps
//! network, a capsule network on plain convolutions, and the backbone with a
//! dense head.
//!
//! Every variant maps `[batch, s, s, 3]` images to scores in `[0, 1)` of
//! shape `[batch, outputs]`: class presence probabilities for
//! classification, a single probability for severity.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{ParamStore, Var};
use crate::backbone::{build_backbone, Backbone, BackboneProfile};
use crate::capsnet::{build_capsule_head, CapsuleHead, CapsuleHeadConfig, HeadKind};
use crate::nn::{Conv2d, Ctx, Dense, Mode};
use crate::rng::{self, Rng};
use crate::tensor::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    #[default]
    Mobilecaps,
    CapsnetOnly,
    BackboneOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CapsnetOnly, Variant::BackboneOnly, Variant::Mobilecaps];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mobilecaps => "mobilecaps",
            Variant::CapsnetOnly => "capsnet_only",
            Variant::BackboneOnly => "backbone_only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Task {
    Classify { classes: usize },
    Severity,
}

impl Task {
    pub fn head_kind(self) -> HeadKind {
        match self {
            Task::Classify { classes } => HeadKind::Classifier { classes },
            Task::Severity => HeadKind::Severity,
        }
    }

    pub fn outputs(self) -> usize {
        self.head_kind().outputs()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub profile: BackboneProfile,
    pub variant: Variant,
    pub task: Task,
    pub head: CapsuleHeadConfig,
    /// Dropout on the feature map before the head.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn paper(task: Task) -> Self {
        ModelConfig {
            profile: BackboneProfile::paper(),
            variant: Variant::Mobilecaps,
            task,
            head: CapsuleHeadConfig::standard(128),
            dropout: 0.2,
        }
    }

    pub fn desk(task: Task) -> Self {
        ModelConfig {
            profile: BackboneProfile::desk(),
            variant: Variant::Mobilecaps,
            task,
            head: CapsuleHeadConfig::standard(64),
            dropout: 0.1,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.profile.input_size, self.profile.input_size, self.profile.input_channels]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TensorError::DropoutRate(self.dropout));
        }
        if self.head.routing_iters == 0 {
            return Err(TensorError::Config("routing_iters must be >= 1".into()));
        }
        if let Task::Classify { classes } = self.task {
            if classes < 2 {
                return Err(TensorError::Config(format!("classification needs >= 2 classes, got {classes}")));
            }
        }
        Ok(())
    }
}

/// Stride-2 3x3 convolutions with bias and relu6, then a 1x1 conv to the
/// target width: the plain front end of a classic capsule network.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainStem {
    convs: Vec<Conv2d>,
}

impl PlainStem {
    pub fn new<T: Real>(store: &mut ParamStore<T>, profile: &BackboneProfile, rng: &mut Rng) -> Result<Self> {
        let mut size = profile.input_size;
        let mut cin = profile.input_channels;
        let mut width = 32;
        let mut convs = Vec::new();
        while size > profile.output_grid {
            let name = format!("stem.conv{}", convs.len() + 1);
            convs.push(Conv2d::new(store, &name, 3, cin, width, 2, true, rng)?);
            size = size.div_ceil(2);
            cin = width;
            width = (width * 2).min(256);
        }
        if size != profile.output_grid {
            return Err(TensorError::Config(format!("plain stem cannot reach a {0}x{0} grid", profile.output_grid)));
        }
        let name = format!("stem.conv{}", convs.len() + 1);
        convs.push(Conv2d::new(store, &name, 1, cin, profile.final_channels, 1, true, rng)?);
        Ok(PlainStem { convs })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(ctx, h)?;
            h = ctx.tape.relu6(h);
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Mobilecaps { backbone: Backbone, head: CapsuleHead },
    CapsnetOnly { stem: PlainStem, head: CapsuleHead },
    BackboneOnly { backbone: Backbone, dense: Dense },
}

/// A model: its configuration, its parameters and the layer graph over them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    body: Body,
}

impl<T: Real> Model<T> {
    /// Builds and initialises a model; the same seed gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derive(seed, 0x1417);
        let mut store = ParamStore::new();
        let feature = config.profile.output_shape();
        let kind = config.task.head_kind();
        let body = match config.variant {
            Variant::Mobilecaps => Body::Mobilecaps {
                backbone: build_backbone(&mut store, "backbone", &config.profile, &mut rng)?,
                head: build_capsule_head(&mut store, "capsules", kind, feature, &config.head, &mut rng)?,
            },
            Variant::CapsnetOnly => Body::CapsnetOnly {
                stem: PlainStem::new(&mut store, &config.profile, &mut rng)?,
                head: build_capsule_head(&mut store, "capsules", kind, feature, &config.head, &mut rng)?,
            },
            Variant::BackboneOnly => Body::BackboneOnly {
                backbone: build_backbone(&mut store, "backbone", &config.profile, &mut rng)?,
                dense: Dense::new(&mut store, "classifier", config.profile.final_channels, kind.outputs(), &mut rng)?,
            },
        };
        Ok(Model { config, store, body })
    }

    pub fn outputs(&self) -> usize {
        self.config.task.outputs()
    }

    pub fn backbone(&self) -> Option<&Backbone> {
        match &self.body {
            Body::Mobilecaps { backbone, .. } | Body::BackboneOnly { backbone, .. } => Some(backbone),
            Body::CapsnetOnly { .. } => None,
        }
    }

    pub fn capsule_head(&self) -> Option<&CapsuleHead> {
        match &self.body {
            Body::Mobilecaps { head, .. } | Body::CapsnetOnly { head, .. } => Some(head),
            Body::BackboneOnly { .. } => None,
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expect = self.config.input_shape();
        if shape.len() != 4 || shape[1..] != expect {
            return Err(TensorError::Config(format!("model expects [batch, {}, {}, {}], got {shape:?}", expect[0], expect[1], expect[2])));
        }
        Ok(())
    }

    /// Feature map before dropout and head.
    pub fn features(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.check_input(ctx.tape.value(x).shape())?;
        match &self.body {
            Body::Mobilecaps { backbone, .. } | Body::BackboneOnly { backbone, .. } => backbone.forward(ctx, x),
            Body::CapsnetOnly { stem, .. } => stem.forward(ctx, x),
        }
    }

    /// Images `[batch, s, s, 3]` to scores `[batch, outputs]`.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let f = self.features(ctx, x)?;
        let f = ctx.dropout(f, self.config.dropout)?;
        match &self.body {
            Body::Mobilecaps { head, .. } | Body::CapsnetOnly { head, .. } => head.forward(ctx, f),
            Body::BackboneOnly { dense, .. } => {
                let pooled = ctx.tape.global_avg_pool(f)?;
                let logits = dense.forward(ctx, pooled)?;
                Ok(ctx.tape.sigmoid(logits))
            }
        }
    }

    /// Inference-mode scores for a batch of images.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(&self.store, Mode::Infer, None);
        let x = ctx.tape.leaf(images.clone());
        let y = self.forward(&mut ctx, x)?;
        Ok(ctx.tape.value(y).clone())
    }

    pub fn param_count(&self) -> ParamCount {
        param_count(&self.store)
    }
}

/// Trainable parameter totals, overall and per module.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// Scalars held in non-trainable parameters (batch norm running stats).
    pub frozen: usize,
    /// Keyed by the first two components of the parameter name, such as
    /// `backbone.block3` or `capsules.caps1`.
    pub modules: BTreeMap<String, usize>,
}

pub fn param_count<T: Real>(store: &ParamStore<T>) -> ParamCount {
    let mut modules = BTreeMap::new();
    let (mut total, mut frozen) = (0, 0);
    for (_, p) in store.iter() {
        if !p.trainable {
            frozen += p.value.len();
            continue;
        }
        total += p.value.len();
        let key: String = p.name.split('.').take(2).collect::<Vec<_>>().join(".");
        *modules.entry(key).or_insert(0) += p.value.len();
    }
    ParamCount { total, frozen, modules }
}

/// Stacks `[h, w, c]` images into a `[batch, h, w, c]` tensor.
pub fn batch_images<T: Real>(images: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let owned: Vec<Tensor<T>> = images.iter().map(|t| (*t).clone()).collect();
    Tensor::stack(&owned)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_variants_produce_scores() {
        let x = Tensor::<f32>::full(&[2, 32, 32, 3], 0.5).unwrap();
        for v in Variant::ALL {
            let m = Model::<f32>::new(ModelConfig::desk(Task::Classify { classes: 3 }).with_variant(v), 3).unwrap();
            let y = m.predict(&x).unwrap();
            assert_eq!(y.shape(), &[2, 3], "{v:?}");
            assert!(y.data().iter().all(|&p| (0.0..1.0).contains(&p)), "{v:?}");
        }
        let m = Model::<f32>::new(ModelConfig::desk(Task::Severity), 3).unwrap();
        assert_eq!(m.predict(&x).unwrap().shape(), &[2, 1]);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = Model::<f32>::new(ModelConfig::desk(Task::Severity), 3).unwrap();
        assert!(m.predict(&Tensor::zeros(&[1, 16, 16, 3]).unwrap()).is_err());
    }
}
