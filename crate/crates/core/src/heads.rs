//! Prediction heads mapping a feature map to `N × P × V` logits.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, Declarations, Init, Module, Scope};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Shared 1×1 projection applied at every horizontal position.
    Shpn,
    /// Separate projection per horizontal position.
    Sepn,
    /// Global pooling, then `k` independent projections.
    Sppn,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Shpn, HeadKind::Sepn, HeadKind::Sppn];
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Shpn => "shpn",
            HeadKind::Sepn => "sepn",
            HeadKind::Sppn => "sppn",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shpn" => Ok(HeadKind::Shpn),
            "sepn" => Ok(HeadKind::Sepn),
            "sppn" => Ok(HeadKind::Sppn),
            other => Err(Error::Config(format!("unknown head `{other}` (expected shpn|sepn|sppn)"))),
        }
    }
}

/// A head bound to a concrete feature-map shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Head {
    pub kind: HeadKind,
    pub channels: usize,
    /// Feature-map width; SEPN parameters depend on it.
    pub width: usize,
    /// Maximum label length `k`, used by SPPN.
    pub max_len: usize,
    pub classes: usize,
}

impl Head {
    pub fn new(kind: HeadKind, feature: [usize; 4], max_len: usize, classes: usize) -> Result<Self> {
        if max_len == 0 || classes == 0 {
            return Err(Error::Config("head needs positive max length and class count".into()));
        }
        Ok(Head {
            kind,
            channels: feature[1],
            width: feature[3],
            max_len,
            classes,
        })
    }

    /// Number of output positions `P`.
    pub fn positions(&self) -> usize {
        match self.kind {
            HeadKind::Shpn | HeadKind::Sepn => self.width,
            HeadKind::Sppn => self.max_len,
        }
    }

    fn projection(&self) -> Conv2d {
        Conv2d::pointwise(self.channels, self.classes)
    }

    pub fn declare(&self, prefix: &str, decl: &mut Declarations) {
        let (c, v) = (self.channels, self.classes);
        match self.kind {
            HeadKind::Shpn => self.projection().declare(prefix, decl),
            HeadKind::Sepn | HeadKind::Sppn => {
                let p = self.positions();
                decl.param(join(prefix, "weight"), &[p, c, v], Init::lecun(c));
                decl.param(join(prefix, "bias"), &[p, 1, v], Init::Zeros);
            }
        }
    }

    /// `[N, C, H, W]` → `[N, P, V]`.
    pub fn output_shape(&self, [n, c, _, w]: [usize; 4]) -> Result<[usize; 3]> {
        if c != self.channels {
            return Err(Error::shape("head", format!("feature has {c} channels, head expects {}", self.channels)));
        }
        if self.kind == HeadKind::Sepn && w != self.width {
            return Err(Error::shape("sepn", format!("feature width {w}, head built for {}", self.width)));
        }
        let p = match self.kind {
            HeadKind::Shpn | HeadKind::Sepn => w,
            HeadKind::Sppn => self.max_len,
        };
        Ok([n, p, self.classes])
    }

    pub fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let s = scope.graph.shape(x).to_vec();
        let [n, c, _, w] = s[..] else {
            return Err(Error::shape("head", format!("expected N×C×H×W, got {s:?}")));
        };
        self.output_shape([n, c, s[2], w])?;
        let v = self.classes;
        match self.kind {
            HeadKind::Shpn => {
                let g = scope.graph.mean(x, &[2])?;
                let y = self.projection().forward(scope, prefix, g)?;
                let y = scope.graph.reshape(y, &[n, v, w])?;
                scope.graph.permute(y, &[0, 2, 1])
            }
            HeadKind::Sepn => {
                let weight = scope.param(&join(prefix, "weight"))?;
                let bias = scope.param(&join(prefix, "bias"))?;
                let g = scope.graph.mean(x, &[2])?;
                let g = scope.graph.reshape(g, &[n, c, w])?;
                let g = scope.graph.permute(g, &[2, 0, 1])?;
                let y = scope.graph.matmul(g, weight)?;
                let y = scope.graph.add(y, bias)?;
                scope.graph.permute(y, &[1, 0, 2])
            }
            HeadKind::Sppn => {
                let k = self.max_len;
                let weight = scope.param(&join(prefix, "weight"))?;
                let bias = scope.param(&join(prefix, "bias"))?;
                let g = scope.graph.global_avg_pool(x)?;
                let g = scope.graph.reshape(g, &[n, c])?;
                let wt = scope.graph.permute(weight, &[1, 0, 2])?;
                let wt = scope.graph.reshape(wt, &[c, k * v])?;
                let y = scope.graph.matmul(g, wt)?;
                let y = scope.graph.reshape(y, &[n, k, v])?;
                let b = scope.graph.reshape(bias, &[1, k, v])?;
                scope.graph.add(y, b)
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut decl = Declarations::new();
        self.declare("head", &mut decl);
        decl.trainable_count()
    }
}
