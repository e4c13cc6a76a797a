use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding};

use super::{join, Conv2d, Declarations, Module, Scope};

/// Top-down fusion of stage-3/4/5 maps into one map at stage-3 resolution.
///
/// 1×1 laterals project every level to `channels`; coarser levels are
/// upsampled ×2 (nearest) and added; one 3×3 conv smooths the fused map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fpn {
    pub in_channels: [usize; 3],
    pub channels: usize,
}

impl Fpn {
    fn lateral(&self, level: usize) -> Conv2d {
        Conv2d::pointwise(self.in_channels[level], self.channels)
    }

    fn smooth(&self) -> Conv2d {
        Conv2d {
            padding: Padding::uniform(1),
            kernel: (3, 3),
            ..Conv2d::pointwise(self.channels, self.channels)
        }
    }

    pub fn declare(&self, prefix: &str, decl: &mut Declarations) {
        for (level, name) in ["lateral3", "lateral4", "lateral5"].iter().enumerate() {
            self.lateral(level).declare(&join(prefix, name), decl);
        }
        self.smooth().declare(&join(prefix, "smooth"), decl);
    }

    pub fn output_shape(&self, c3: [usize; 4], c4: [usize; 4], c5: [usize; 4]) -> Result<[usize; 4]> {
        for (level, s) in [c3, c4, c5].iter().enumerate() {
            if s[1] != self.in_channels[level] {
                return Err(Error::shape(
                    "fpn",
                    format!("stage-{} map has {} channels, expected {}", level + 3, s[1], self.in_channels[level]),
                ));
            }
        }
        let halves = |fine: [usize; 4], coarse: [usize; 4]| {
            fine[0] == coarse[0] && fine[2] == 2 * coarse[2] && fine[3] == 2 * coarse[3]
        };
        if !halves(c3, c4) || !halves(c4, c5) {
            return Err(Error::shape(
                "fpn",
                format!("need c4 = c3/2 and c5 = c3/4 spatially, got {c3:?}, {c4:?}, {c5:?}"),
            ));
        }
        Ok([c3[0], self.channels, c3[2], c3[3]])
    }

    pub fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, maps: [Var; 3]) -> Result<Var> {
        let shapes = maps
            .iter()
            .map(|&v| super::non_local::shape4(scope.graph.shape(v)))
            .collect::<Result<Vec<_>>>()?;
        self.output_shape(shapes[0], shapes[1], shapes[2])?;
        let l3 = self.lateral(0).forward(scope, &join(prefix, "lateral3"), maps[0])?;
        let l4 = self.lateral(1).forward(scope, &join(prefix, "lateral4"), maps[1])?;
        let l5 = self.lateral(2).forward(scope, &join(prefix, "lateral5"), maps[2])?;
        let up5 = scope.graph.upsample_nearest(l5, 2)?;
        let p4 = scope.graph.add(l4, up5)?;
        let up4 = scope.graph.upsample_nearest(p4, 2)?;
        let p3 = scope.graph.add(l3, up4)?;
        self.smooth().forward(scope, &join(prefix, "smooth"), p3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_ratios() {
        let f = Fpn {
            in_channels: [4, 8, 8],
            channels: 6,
        };
        assert_eq!(
            f.output_shape([1, 4, 8, 16], [1, 8, 4, 8], [1, 8, 2, 4]).unwrap(),
            [1, 6, 8, 16]
        );
        assert!(f.output_shape([1, 4, 8, 16], [1, 8, 4, 8], [1, 8, 4, 8]).is_err());
        assert!(f.output_shape([1, 5, 8, 16], [1, 8, 4, 8], [1, 8, 2, 4]).is_err());
    }
}
