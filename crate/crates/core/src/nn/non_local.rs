use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Element;

use super::{join, Conv2d, Declarations, Module, Scope};

/// Embedded-Gaussian non-local unit with a residual connection.
///
/// `y_i = Σ_j softmax_j(θ(x_i)·φ(x_j)) g(x_j)`, output `W_z(y) + x`. The
/// output projection `W_z` starts at zero, making the unit an exact identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NonLocal {
    pub channels: usize,
}

impl NonLocal {
    pub fn new(channels: usize) -> Result<Self> {
        if channels / 2 < 1 {
            return Err(Error::Config(format!(
                "non-local unit needs at least 2 channels, got {channels}"
            )));
        }
        Ok(NonLocal { channels })
    }

    pub fn inner_channels(&self) -> usize {
        self.channels / 2
    }

    fn embed(&self) -> Conv2d {
        Conv2d::pointwise(self.channels, self.inner_channels())
    }

    fn out_proj(&self) -> Conv2d {
        Conv2d::pointwise(self.inner_channels(), self.channels).zero_initialized()
    }
}

impl Module for NonLocal {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        for name in ["theta", "phi", "g"] {
            self.embed().declare(&join(prefix, name), decl);
        }
        self.out_proj().declare(&join(prefix, "out"), decl);
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.output_shape(shape4(scope.graph.shape(x))?)?;
        let (inner, positions) = (self.inner_channels(), h * w);

        let theta = self.embed().forward(scope, &join(prefix, "theta"), x)?;
        let phi = self.embed().forward(scope, &join(prefix, "phi"), x)?;
        let g = self.embed().forward(scope, &join(prefix, "g"), x)?;

        let graph = &mut *scope.graph;
        let theta = graph.reshape(theta, &[n, inner, positions])?;
        let theta = graph.permute(theta, &[0, 2, 1])?;
        let phi = graph.reshape(phi, &[n, inner, positions])?;
        let affinity = graph.matmul(theta, phi)?;
        let attention = graph.softmax(affinity, 2)?;
        let g = graph.reshape(g, &[n, inner, positions])?;
        let g = graph.permute(g, &[0, 2, 1])?;
        let y = graph.matmul(attention, g)?;
        let y = graph.permute(y, &[0, 2, 1])?;
        let y = graph.reshape(y, &[n, inner, h, w])?;

        let z = self.out_proj().forward(scope, &join(prefix, "out"), y)?;
        debug_assert_eq!(scope.graph.shape(z), [n, c, h, w]);
        scope.graph.add(z, x)
    }

    fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        if input[1] != self.channels {
            return Err(Error::shape(
                "non_local",
                format!("input has {} channels, unit has {}", input[1], self.channels),
            ));
        }
        Ok(input)
    }
}

pub(crate) fn shape4(s: &[usize]) -> Result<[usize; 4]> {
    s.try_into()
        .map_err(|_| Error::shape("block", format!("expected an N×C×H×W tensor, got {s:?}")))
}
