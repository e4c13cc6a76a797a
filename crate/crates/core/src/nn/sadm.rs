use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding};

use super::{join, Conv2d, ConvBnRelu, Declarations, Module, NonLocal, Scope};

/// Placement tag of a semantic-aware downsampling module. Both variants
/// compute the same function; the tag records where in the backbone it sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SadmVariant {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SadmSpec {
    pub channels: usize,
    pub variant: SadmVariant,
    pub stride: (usize, usize),
}

impl SadmSpec {
    pub fn new(channels: usize, variant: SadmVariant) -> Self {
        SadmSpec {
            channels,
            variant,
            stride: (2, 2),
        }
    }
}

/// Stage-entry downsampling: an optional non-local unit followed by a strided
/// 3×3 conv-bn-relu. With the non-local unit this is SADM; without it, the
/// plain strided convolution of the base backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Downsample {
    pub spec: SadmSpec,
    non_local: Option<NonLocal>,
}

impl Downsample {
    pub fn sadm(spec: SadmSpec) -> Result<Self> {
        Ok(Downsample {
            spec,
            non_local: Some(NonLocal::new(spec.channels)?),
        })
    }

    pub fn plain(spec: SadmSpec) -> Self {
        Downsample { spec, non_local: None }
    }

    pub fn is_semantic_aware(&self) -> bool {
        self.non_local.is_some()
    }

    fn conv(&self) -> ConvBnRelu {
        ConvBnRelu::new(Conv2d {
            stride: self.spec.stride,
            padding: Padding::uniform(1),
            ..Conv2d::same3x3(self.spec.channels, self.spec.channels)
        })
    }
}

impl Module for Downsample {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        if let Some(nl) = &self.non_local {
            nl.declare(&join(prefix, "non_local"), decl);
        }
        self.conv().declare(&join(prefix, "down"), decl);
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        self.output_shape(super::non_local::shape4(scope.graph.shape(x))?)?;
        let x = match &self.non_local {
            Some(nl) => nl.forward(scope, &join(prefix, "non_local"), x)?,
            None => x,
        };
        self.conv().forward(scope, &join(prefix, "down"), x)
    }

    fn output_shape(&self, [n, c, h, w]: [usize; 4]) -> Result<[usize; 4]> {
        let (sh, sw) = self.spec.stride;
        if c != self.spec.channels {
            return Err(Error::shape(
                "sadm",
                format!("input has {c} channels, module has {}", self.spec.channels),
            ));
        }
        if h % sh != 0 || w % sw != 0 {
            return Err(Error::shape(
                "sadm",
                format!("spatial size {h}×{w} is not divisible by stride {sh}×{sw}"),
            ));
        }
        Ok([n, c, h / sh, w / sw])
    }
}
