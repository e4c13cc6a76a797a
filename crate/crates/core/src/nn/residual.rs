use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding};

use super::{join, BatchNorm2d, Cbam, Conv2d, ConvBnRelu, Declarations, Module, Scope};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub with_cbam: bool,
}

/// `relu(F(x) + shortcut(x))` with `F = conv3×3-bn-relu-conv3×3-bn`, optionally
/// gated by CBAM before the addition. The shortcut is a 1×1 projection (plus
/// batch norm) exactly when the channel count changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualBlock {
    pub spec: ResidualBlockSpec,
    cbam: Option<Cbam>,
}

impl ResidualBlock {
    pub fn new(spec: ResidualBlockSpec, cbam_reduction: usize) -> Result<Self> {
        let cbam = if spec.with_cbam {
            Some(Cbam::new(spec.out_channels, cbam_reduction)?)
        } else {
            None
        };
        Ok(ResidualBlock { spec, cbam })
    }

    pub fn has_projection(&self) -> bool {
        self.spec.in_channels != self.spec.out_channels
    }

    fn first(&self) -> ConvBnRelu {
        ConvBnRelu::new(Conv2d::same3x3(self.spec.in_channels, self.spec.out_channels))
    }

    fn second(&self) -> (Conv2d, BatchNorm2d) {
        (
            Conv2d::same3x3(self.spec.out_channels, self.spec.out_channels),
            BatchNorm2d {
                channels: self.spec.out_channels,
            },
        )
    }

    fn projection(&self) -> (Conv2d, BatchNorm2d) {
        (
            Conv2d {
                padding: Padding::NONE,
                ..Conv2d::pointwise(self.spec.in_channels, self.spec.out_channels).with_bias(false)
            },
            BatchNorm2d {
                channels: self.spec.out_channels,
            },
        )
    }
}

impl Module for ResidualBlock {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        self.first().declare(&join(prefix, "conv1"), decl);
        let (conv2, bn2) = self.second();
        conv2.declare(&join(prefix, "conv2"), decl);
        bn2.declare(&join(prefix, "bn2"), decl);
        if let Some(cbam) = &self.cbam {
            cbam.declare(&join(prefix, "cbam"), decl);
        }
        if self.has_projection() {
            let (conv, bn) = self.projection();
            conv.declare(&join(prefix, "shortcut.conv"), decl);
            bn.declare(&join(prefix, "shortcut.bn"), decl);
        }
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let shape = super::non_local::shape4(scope.graph.shape(x))?;
        self.output_shape(shape)?;
        let f = self.first().forward(scope, &join(prefix, "conv1"), x)?;
        let (conv2, bn2) = self.second();
        let f = conv2.forward(scope, &join(prefix, "conv2"), f)?;
        let mut f = bn2.forward(scope, &join(prefix, "bn2"), f)?;
        if let Some(cbam) = &self.cbam {
            f = cbam.forward(scope, &join(prefix, "cbam"), f)?;
        }
        let shortcut = if self.has_projection() {
            let (conv, bn) = self.projection();
            let s = conv.forward(scope, &join(prefix, "shortcut.conv"), x)?;
            bn.forward(scope, &join(prefix, "shortcut.bn"), s)?
        } else {
            x
        };
        let sum = scope.graph.add(f, shortcut)?;
        Ok(scope.graph.relu(sum))
    }

    fn output_shape(&self, [n, c, h, w]: [usize; 4]) -> Result<[usize; 4]> {
        if c != self.spec.in_channels {
            return Err(Error::shape(
                "residual_block",
                format!("input has {c} channels, block expects {}", self.spec.in_channels),
            ));
        }
        Ok([n, self.spec.out_channels, h, w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::nn::Mode;
    use crate::tensor::Tensor;

    fn forward(block: &ResidualBlock, store: &crate::ParameterStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let mut scope = Scope::new(&mut g, store, Mode::Train);
        let xv = scope.graph.constant(x.clone());
        let y = block.forward(&mut scope, "blk", xv).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zero_residual_branch_gives_relu_of_input() {
        let block = ResidualBlock::new(
            ResidualBlockSpec {
                in_channels: 4,
                out_channels: 4,
                with_cbam: false,
            },
            4,
        )
        .unwrap();
        let mut decl = Declarations::new();
        block.declare("blk", &mut decl);
        let mut store = decl.instantiate::<f64>(1).unwrap();
        for name in ["blk.conv1.conv.weight", "blk.conv2.weight"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.set(name, Tensor::zeros(&shape).unwrap()).unwrap();
        }
        let x = Tensor::from_fn(&[2, 4, 3, 3], |i| (i as f64 * 0.7).sin()).unwrap();
        let y = forward(&block, &store, &x);
        for (&a, &b) in x.data().iter().zip(y.data()) {
            assert_eq!(b, a.max(0.0));
        }
    }

    #[test]
    fn projection_only_when_channels_change() {
        let spec = ResidualBlockSpec {
            in_channels: 3,
            out_channels: 5,
            with_cbam: true,
        };
        let block = ResidualBlock::new(spec, 4).unwrap();
        assert!(block.has_projection());
        let mut decl = Declarations::new();
        block.declare("blk", &mut decl);
        assert!(decl.specs().iter().any(|s| s.name == "blk.shortcut.conv.weight"));
        let store = decl.instantiate::<f64>(2).unwrap();
        let x = Tensor::from_fn(&[1, 3, 4, 4], |i| (i as f64).cos()).unwrap();
        assert_eq!(forward(&block, &store, &x).shape(), &[1, 5, 4, 4]);

        let same = ResidualBlock::new(ResidualBlockSpec { in_channels: 5, ..spec }, 4).unwrap();
        assert!(!same.has_projection());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let block = ResidualBlock::new(
            ResidualBlockSpec {
                in_channels: 3,
                out_channels: 3,
                with_cbam: false,
            },
            1,
        )
        .unwrap();
        assert!(block.output_shape([1, 4, 2, 2]).is_err());
    }
}
