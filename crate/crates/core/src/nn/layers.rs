use crate::autodiff::{NormStats, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding, Tensor};

use super::{join, Declarations, Init, Mode, Module, Scope};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub bias: bool,
    /// Zero-initialise weight and bias instead of the fan-in uniform.
    pub zero_init: bool,
    /// Use the ReLU-gain initialisation (layers followed by a ReLU).
    pub relu_gain: bool,
}

impl Conv2d {
    /// 3×3, stride 1, "same" padding, no bias (a batch norm follows).
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: (1, 1),
            padding: Padding::uniform(1),
            bias: false,
            zero_init: false,
            relu_gain: true,
        }
    }

    /// 1×1 projection with bias.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel: (1, 1),
            stride: (1, 1),
            padding: Padding::NONE,
            bias: true,
            zero_init: false,
            relu_gain: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn zero_initialized(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn with_relu_gain(mut self, on: bool) -> Self {
        self.relu_gain = on;
        self
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }
}

impl Module for Conv2d {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        let init = if self.zero_init {
            Init::Zeros
        } else if self.relu_gain {
            Init::he(self.fan_in())
        } else {
            Init::lecun(self.fan_in())
        };
        decl.param(
            join(prefix, "weight"),
            &[self.out_channels, self.in_channels, self.kernel.0, self.kernel.1],
            init,
        );
        if self.bias {
            decl.param(join(prefix, "bias"), &[self.out_channels], Init::Zeros);
        }
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let w = scope.param(&join(prefix, "weight"))?;
        let b = if self.bias {
            Some(scope.param(&join(prefix, "bias"))?)
        } else {
            None
        };
        scope.graph.conv2d(x, w, b, self.stride, self.padding)
    }

    fn output_shape(&self, [n, c, h, w]: [usize; 4]) -> Result<[usize; 4]> {
        if c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but layer expects {}", self.in_channels),
            ));
        }
        let p = self.padding;
        let (ph, pw) = (h + p.top + p.bottom, w + p.left + p.right);
        if ph < self.kernel.0 || pw < self.kernel.1 {
            return Err(Error::shape("conv2d", format!("padded input {ph}×{pw} smaller than kernel")));
        }
        Ok([
            n,
            self.out_channels,
            (ph - self.kernel.0) / self.stride.0 + 1,
            (pw - self.kernel.1) / self.stride.1 + 1,
        ])
    }
}

/// Batch normalisation with running statistics (momentum 0.9 on the old
/// value, unbiased batch variance).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm2d {
    pub channels: usize,
}

impl Module for BatchNorm2d {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        decl.param(join(prefix, "gamma"), &[self.channels], Init::Ones);
        decl.param(join(prefix, "beta"), &[self.channels], Init::Zeros);
        decl.buffer(join(prefix, "running_mean"), &[self.channels], Init::Zeros);
        decl.buffer(join(prefix, "running_var"), &[self.channels], Init::Ones);
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let gamma = scope.param(&join(prefix, "gamma"))?;
        let beta = scope.param(&join(prefix, "beta"))?;
        let mean_name = join(prefix, "running_mean");
        let var_name = join(prefix, "running_var");
        let eps = T::from_f64_lossy(BN_EPS);
        match scope.mode() {
            Mode::Train => {
                let out = scope.graph.batch_norm(x, gamma, beta, NormStats::Batch, eps)?;
                let (bm, bv) = out.batch_moments.expect("batch statistics in train mode");
                let momentum = T::from_f64_lossy(BN_MOMENTUM);
                let blend = |old: &Tensor<T>, new: &[T]| -> Result<Tensor<T>> {
                    let v = old
                        .data()
                        .iter()
                        .zip(new)
                        .map(|(&o, &n)| momentum * o + (T::one() - momentum) * n)
                        .collect();
                    Tensor::new(old.shape(), v)
                };
                let new_mean = blend(scope.buffer(&mean_name)?, &bm)?;
                let new_var = blend(scope.buffer(&var_name)?, &bv)?;
                scope.record_update(mean_name, new_mean);
                scope.record_update(var_name, new_var);
                Ok(out.out)
            }
            Mode::Eval => {
                let mean = scope.buffer(&mean_name)?.data().to_vec();
                let var = scope.buffer(&var_name)?.data().to_vec();
                let out = scope
                    .graph
                    .batch_norm(x, gamma, beta, NormStats::Running { mean, var }, eps)?;
                Ok(out.out)
            }
        }
    }

    fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        if input[1] != self.channels {
            return Err(Error::shape(
                "batch_norm",
                format!("input has {} channels, layer has {}", input[1], self.channels),
            ));
        }
        Ok(input)
    }
}

/// Convolution → batch norm → ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(conv: Conv2d) -> Self {
        let conv = conv.with_bias(false).with_relu_gain(true);
        ConvBnRelu {
            bn: BatchNorm2d {
                channels: conv.out_channels,
            },
            conv,
        }
    }
}

impl Module for ConvBnRelu {
    fn declare(&self, prefix: &str, decl: &mut Declarations) {
        self.conv.declare(&join(prefix, "conv"), decl);
        self.bn.declare(&join(prefix, "bn"), decl);
    }

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var> {
        let y = self.conv.forward(scope, &join(prefix, "conv"), x)?;
        let y = self.bn.forward(scope, &join(prefix, "bn"), y)?;
        Ok(scope.graph.relu(y))
    }

    fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        self.conv.output_shape(input)
    }
}
