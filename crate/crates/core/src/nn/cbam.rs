use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding};

use super::{join, Conv2d, Declarations, Module, Scope};

/// Channel-then-spatial sigmoid gating.
///
/// `Mc = σ(mlp(avgpool(x)) + mlp(maxpool(x)))`, `x' = Mc ⊙ x`,
/// `Ms = σ(conv7×7([mean_c(x'), max_c(x')]))`, output `Ms ⊙ x'`.
/// The last layer of each gate starts at zero, so both gates start at 0.5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cbam {
    pub channels: usize,
    pub reduction: usize,
}

impl Cbam {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels < reduction {
            return Err(Error::Config(format!(
                "cbam needs channels ≥ reduction ratio, got {channels} < {reduction}"
            )));
        }
        Ok(Cbam { channels, reduction })
    }

    fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    fn fc1(&self) -> Conv2d {
        Conv2d::pointwise(self.channels, self.hidden()).with_relu_gain(true)
    }

    fn fc2(&self) -> Conv2d {
        Conv2d::pointwise(self.hidden(), self.channels).zero_initialized()
    }

    fn spatial(&self) -> Conv2d {
        Conv2d {
            in_channels: 2,
            out_channels: 1,
            kernel: (7, 7),
            stride: (1, 1),
            padding: Padding::uniform(3),
            bias: true,
            zero_init: true,
            relu_gain: false,
        }
    }

    fn mlp<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let h = self.fc1().forward(scope, &join(prefix, "channel.fc1"), x)?;
        let h = scope.graph.relu(h);
        self.fc2().forward(scope, &join(prefix, "channel.fc2"), h)
    }
}

impl Module for Cbam {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        self.fc1().declare(&join(prefix, "channel.fc1"), decl);
        self.fc2().declare(&join(prefix, "channel.fc2"), decl);
        self.spatial().declare(&join(prefix, "spatial"), decl);
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let avg = scope.graph.mean(x, &[2, 3])?;
        let max = scope.graph.max(x, &[2, 3])?;
        let a = self.mlp(scope, prefix, avg)?;
        let m = self.mlp(scope, prefix, max)?;
        let logits = scope.graph.add(a, m)?;
        let channel_gate = scope.graph.sigmoid(logits);
        let x1 = scope.graph.mul(x, channel_gate)?;

        let avg_c = scope.graph.mean(x1, &[1])?;
        let max_c = scope.graph.max(x1, &[1])?;
        let pooled = scope.graph.concat(&[avg_c, max_c], 1)?;
        let s = self.spatial().forward(scope, &join(prefix, "spatial"), pooled)?;
        let spatial_gate = scope.graph.sigmoid(s);
        scope.graph.mul(x1, spatial_gate)
    }

    fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        if input[1] != self.channels {
            return Err(Error::shape(
                "cbam",
                format!("input has {} channels, module has {}", input[1], self.channels),
            ));
        }
        Ok(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::nn::Mode;
    use crate::tensor::Tensor;

    fn run(cbam: &Cbam, x: Tensor<f64>, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut decl = Declarations::new();
        cbam.declare("cbam", &mut decl);
        let store = decl.instantiate::<f64>(seed).unwrap();
        let mut g = Graph::new();
        let mut scope = Scope::new(&mut g, &store, Mode::Train);
        let xv = scope.graph.constant(x.clone());
        let y = cbam.forward(&mut scope, "cbam", xv).unwrap();
        (x, g.value(y).clone())
    }

    #[test]
    fn zero_gates_scale_by_exactly_a_quarter() {
        let cbam = Cbam::new(8, 4).unwrap();
        let x = Tensor::from_fn(&[2, 8, 3, 5], |i| ((i * 37 % 101) as f64 - 50.0) * 0.173).unwrap();
        let (x, y) = run(&cbam, x, 3);
        for (&a, &b) in x.data().iter().zip(y.data()) {
            assert_eq!(b, 0.25 * a);
        }
    }

    #[test]
    fn rejects_too_few_channels() {
        assert!(Cbam::new(8, 16).is_err());
    }
}
