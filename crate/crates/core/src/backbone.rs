//! The five-stage CPNet backbone, its scaled toy profile, and the ablation
//! toggles that revert it to the base recogniser backbone.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{
    join, Conv2d, ConvBnRelu, Declarations, Downsample, Fpn, Module, ResidualBlock,
    ResidualBlockSpec, SadmSpec, SadmVariant, Scope,
};
use crate::tensor::{Element, Padding};

/// Which channel/depth/resolution table to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProfileKind {
    /// Full-size network on 48×192 inputs.
    Paper,
    /// Channels ÷ 8, one block per stage, 16×64 inputs.
    Toy,
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileKind::Paper => "paper",
            ProfileKind::Toy => "toy",
        })
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ProfileKind::Paper),
            "toy" => Ok(ProfileKind::Toy),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper|toy)"))),
        }
    }
}

/// Backbone ablation axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationToggles {
    /// Enhanced module: widened/deepened stages, larger input, CBAM and FPN.
    pub em: bool,
    /// Semantic-aware downsampling instead of plain strided convolutions.
    pub sadm: bool,
}

impl AblationToggles {
    pub const BASE: AblationToggles = AblationToggles { em: false, sadm: false };
    pub const FULL: AblationToggles = AblationToggles { em: true, sadm: true };
}

/// Channel widths, block repeats and input resolution of a backbone.
///
/// `stage_channels` holds the two stage-1 conv widths followed by the output
/// widths of stages 2–5. `repeats` holds the residual block counts for stage
/// 2, stage 3, stage 4 (before its middle conv), stage 4 (after it), stage 5.
/// An empty `stage_channels` is the degenerate zero-layer profile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneProfile {
    pub stage_channels: Vec<usize>,
    pub repeats: [usize; 5],
    pub input: (usize, usize),
    pub fpn_channels: usize,
    pub cbam_reduction: usize,
}

impl BackboneProfile {
    pub fn paper() -> Self {
        BackboneProfile {
            stage_channels: vec![48, 96, 192, 384, 768, 768],
            repeats: [1, 4, 7, 5, 3],
            input: (48, 192),
            fpn_channels: 512,
            cbam_reduction: 16,
        }
    }

    pub fn toy() -> Self {
        BackboneProfile {
            stage_channels: vec![6, 12, 24, 48, 96, 96],
            repeats: [1, 1, 1, 0, 1],
            input: (16, 64),
            fpn_channels: 64,
            cbam_reduction: 4,
        }
    }

    /// Profile with no layers at all; the backbone is the identity.
    pub fn degenerate() -> Self {
        BackboneProfile {
            stage_channels: Vec::new(),
            repeats: [0; 5],
            input: (16, 64),
            fpn_channels: 0,
            cbam_reduction: 1,
        }
    }

    /// Profile for `kind` under the given toggles. Without EM the widths are
    /// scaled by 2/3, stages are shallower and the input is smaller.
    pub fn for_toggles(kind: ProfileKind, toggles: AblationToggles) -> Self {
        let full = match kind {
            ProfileKind::Paper => Self::paper(),
            ProfileKind::Toy => Self::toy(),
        };
        if toggles.em {
            return full;
        }
        let (repeats, input) = match kind {
            ProfileKind::Paper => ([1, 2, 5, 0, 3], (32, 128)),
            ProfileKind::Toy => (full.repeats, (16, 48)),
        };
        BackboneProfile {
            stage_channels: full.stage_channels.iter().map(|c| c * 2 / 3).collect(),
            repeats,
            input,
            ..full
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.stage_channels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_degenerate() {
            return Ok(());
        }
        if self.stage_channels.len() != 6 || self.stage_channels.contains(&0) {
            return Err(Error::Config(format!(
                "profile needs six positive stage widths, got {:?}",
                self.stage_channels
            )));
        }
        let (h, w) = self.input;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!(
                "input {h}×{w} must be a positive multiple of 16 in both dims"
            )));
        }
        if self.fpn_channels == 0 || self.cbam_reduction == 0 {
            return Err(Error::Config("fpn width and cbam reduction must be positive".into()));
        }
        Ok(())
    }
}

/// Backbone construction options.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub profile: BackboneProfile,
    pub sadm: bool,
    pub cbam: bool,
    pub fpn: bool,
}

impl BackboneConfig {
    /// CBAM and FPN follow the EM toggle.
    pub fn from_toggles(kind: ProfileKind, toggles: AblationToggles) -> Self {
        BackboneConfig {
            profile: BackboneProfile::for_toggles(kind, toggles),
            sadm: toggles.sadm,
            cbam: toggles.em,
            fpn: toggles.em,
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Stem(ConvBnRelu),
    Pool,
    Down(Downsample),
    Block(ResidualBlock),
    Conv(ConvBnRelu),
}

#[derive(Clone, Debug)]
struct Stage {
    name: &'static str,
    layers: Vec<(String, Layer)>,
}

/// Assembled backbone: named layers plus optional FPN.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    stages: Vec<Stage>,
    fpn: Option<Fpn>,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.profile.validate()?;
        if config.profile.is_degenerate() {
            return Ok(Backbone {
                config,
                stages: Vec::new(),
                fpn: None,
            });
        }
        let p = &config.profile;
        let ch = &p.stage_channels;
        let r = p.repeats;
        let block = |cin: usize, cout: usize| {
            ResidualBlock::new(
                ResidualBlockSpec {
                    in_channels: cin,
                    out_channels: cout,
                    with_cbam: config.cbam,
                },
                p.cbam_reduction,
            )
            .map(Layer::Block)
        };
        let down = |channels: usize, variant: SadmVariant| -> Result<Layer> {
            let spec = SadmSpec::new(channels, variant);
            Ok(Layer::Down(if config.sadm {
                Downsample::sadm(spec)?
            } else {
                Downsample::plain(spec)
            }))
        };
        let conv3 = |cin: usize, cout: usize| Layer::Conv(ConvBnRelu::new(Conv2d::same3x3(cin, cout)));

        // Appends `count` residual blocks, the first one changing width.
        let blocks = |layers: &mut Vec<(String, Layer)>, start: usize, count: usize, cin: usize, cout: usize| -> Result<usize> {
            for i in 0..count {
                let input = if i == 0 { cin } else { cout };
                layers.push((format!("block{}", start + i), block(input, cout)?));
            }
            Ok(if count > 0 { cout } else { cin })
        };

        let stage1 = Stage {
            name: "stage1",
            layers: vec![
                ("conv0".into(), Layer::Stem(ConvBnRelu::new(Conv2d::same3x3(1, ch[0])))),
                ("conv1".into(), Layer::Stem(ConvBnRelu::new(Conv2d::same3x3(ch[0], ch[1])))),
            ],
        };

        let mut layers = vec![("pool".to_string(), Layer::Pool)];
        let c = blocks(&mut layers, 0, r[0], ch[1], ch[2])?;
        layers.push(("conv".into(), conv3(c, ch[2])));
        let stage2 = Stage { name: "stage2", layers };

        let mut layers = vec![("down".to_string(), down(ch[2], SadmVariant::A)?)];
        let c = blocks(&mut layers, 0, r[1], ch[2], ch[3])?;
        layers.push(("conv".into(), conv3(c, ch[3])));
        let stage3 = Stage { name: "stage3", layers };

        let mut layers = vec![("down".to_string(), down(ch[3], SadmVariant::A)?)];
        let c = blocks(&mut layers, 0, r[2], ch[3], ch[4])?;
        layers.push(("conv".into(), conv3(c, ch[4])));
        blocks(&mut layers, r[2], r[3], ch[4], ch[4])?;
        let stage4 = Stage { name: "stage4", layers };

        let mut layers = vec![("down".to_string(), down(ch[4], SadmVariant::B)?)];
        let c = blocks(&mut layers, 0, r[4], ch[4], ch[5])?;
        let tail = Conv2d {
            kernel: (2, 2),
            padding: Padding::new(0, 1, 0, 1),
            ..Conv2d::same3x3(c, ch[5])
        };
        layers.push(("conv".into(), Layer::Conv(ConvBnRelu::new(tail))));
        let stage5 = Stage { name: "stage5", layers };

        let fpn = config.fpn.then(|| Fpn {
            in_channels: [ch[3], ch[4], ch[5]],
            channels: p.fpn_channels,
        });
        Ok(Backbone {
            config,
            stages: vec![stage1, stage2, stage3, stage4, stage5],
            fpn,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.config.profile.input
    }

    pub fn declare(&self, prefix: &str, decl: &mut Declarations) {
        for stage in &self.stages {
            let sp = join(prefix, stage.name);
            for (name, layer) in &stage.layers {
                let lp = join(&sp, name);
                match layer {
                    Layer::Stem(m) | Layer::Conv(m) => m.declare(&lp, decl),
                    Layer::Pool => {}
                    Layer::Down(m) => m.declare(&lp, decl),
                    Layer::Block(m) => m.declare(&lp, decl),
                }
            }
        }
        if let Some(fpn) = &self.fpn {
            fpn.declare(&join(prefix, "fpn"), decl);
        }
    }

    /// Pure shape inference for an `N×1×H×W` input.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let mut s = input;
        let mut stage_out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for (_, layer) in &stage.layers {
                s = match layer {
                    Layer::Stem(m) | Layer::Conv(m) => m.output_shape(s)?,
                    Layer::Pool => [s[0], s[1], s[2].div_ceil(2), s[3].div_ceil(2)],
                    Layer::Down(m) => m.output_shape(s)?,
                    Layer::Block(m) => m.output_shape(s)?,
                };
            }
            stage_out.push(s);
        }
        match &self.fpn {
            Some(fpn) => fpn.output_shape(stage_out[2], stage_out[3], stage_out[4]),
            None => Ok(s),
        }
    }

    pub fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        let mut stage_out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let sp = join(prefix, stage.name);
            for (name, layer) in &stage.layers {
                let lp = join(&sp, name);
                h = match layer {
                    Layer::Stem(m) | Layer::Conv(m) => m.forward(scope, &lp, h)?,
                    Layer::Pool => scope.graph.maxpool2d(h)?,
                    Layer::Down(m) => m.forward(scope, &lp, h)?,
                    Layer::Block(m) => m.forward(scope, &lp, h)?,
                };
            }
            stage_out.push(h);
        }
        match &self.fpn {
            Some(fpn) => fpn.forward(
                scope,
                &join(prefix, "fpn"),
                [stage_out[2], stage_out[3], stage_out[4]],
            ),
            None => Ok(h),
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut decl = Declarations::new();
        self.declare("backbone", &mut decl);
        decl.trainable_count()
    }
}

/// Trainable scalars of the backbone for a profile/toggle pair.
pub fn parameter_count(kind: ProfileKind, toggles: AblationToggles) -> Result<usize> {
    Ok(Backbone::new(BackboneConfig::from_toggles(kind, toggles))?.parameter_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_matches_table() {
        let p = BackboneProfile::paper();
        assert_eq!(p.stage_channels, [48, 96, 192, 384, 768, 768]);
        assert_eq!(p.repeats, [1, 4, 7, 5, 3]);
        assert_eq!(p.input, (48, 192));
        assert_eq!(p.fpn_channels, 512);
    }

    #[test]
    fn toy_is_paper_over_eight() {
        let (p, t) = (BackboneProfile::paper(), BackboneProfile::toy());
        for (a, b) in p.stage_channels.iter().zip(&t.stage_channels) {
            assert_eq!(a / 8, *b);
        }
        assert_eq!(p.fpn_channels / 8, t.fpn_channels);
    }

    #[test]
    fn degenerate_profile_has_no_parameters() {
        let cfg = BackboneConfig {
            profile: BackboneProfile::degenerate(),
            sadm: true,
            cbam: true,
            fpn: true,
        };
        let b = Backbone::new(cfg).unwrap();
        assert_eq!(b.parameter_count(), 0);
        assert_eq!(b.output_shape([1, 1, 16, 64]).unwrap(), [1, 1, 16, 64]);
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = BackboneProfile::toy();
        p.input = (20, 64);
        assert!(p.validate().is_err());
        let mut p = BackboneProfile::toy();
        p.stage_channels.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn parameter_names_follow_hierarchy() {
        let b = Backbone::new(BackboneConfig::from_toggles(ProfileKind::Toy, AblationToggles::FULL)).unwrap();
        let mut decl = Declarations::new();
        b.declare("backbone", &mut decl);
        let names: Vec<&str> = decl.specs().iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains(&"backbone.stage3.block0.conv1.conv.weight"));
        assert!(names.contains(&"backbone.stage3.down.non_local.out.weight"));
        assert!(names.contains(&"backbone.stage5.down.non_local.theta.weight"));
        assert!(names.contains(&"backbone.fpn.smooth.weight"));
        assert!(names.contains(&"backbone.stage2.block0.cbam.spatial.weight"));
    }
}
