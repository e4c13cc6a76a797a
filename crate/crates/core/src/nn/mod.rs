//! Parameter declaration, the forward-pass scope, and the CSTR building blocks.

mod cbam;
mod fpn;
mod layers;
mod non_local;
mod residual;
mod sadm;

use std::collections::HashMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cbam::Cbam;
pub use fpn::Fpn;
pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, BN_EPS, BN_MOMENTUM};
pub use non_local::NonLocal;
pub use residual::{ResidualBlock, ResidualBlockSpec};
pub use sadm::{Downsample, SadmSpec, SadmVariant};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::ParameterStore;
use crate::tensor::{Element, Tensor};

/// Initial value distribution of a declared parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

impl Init {
    /// Fan-in scaled uniform for layers followed by a ReLU.
    pub fn he(fan_in: usize) -> Init {
        Init::Uniform((6.0 / fan_in as f64).sqrt())
    }

    /// Fan-in scaled uniform with unit output variance for linear layers.
    pub fn lecun(fan_in: usize) -> Init {
        Init::Uniform((3.0 / fan_in as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub trainable: bool,
}

/// Every tensor a model needs, collected before any memory is allocated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Declarations {
    specs: Vec<ParamSpec>,
}

impl Declarations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&mut self, name: String, shape: &[usize], init: Init) {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
            trainable: true,
        });
    }

    pub fn buffer(&mut self, name: String, shape: &[usize], init: Init) {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
            trainable: false,
        });
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Trainable scalar count.
    pub fn trainable_count(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| s.trainable)
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    /// Allocates and initialises every declared tensor.
    ///
    /// Each tensor draws from its own generator seeded by `(seed, name)`, so
    /// values do not depend on declaration order.
    pub fn instantiate<T: Element>(&self, seed: u64) -> Result<ParameterStore<T>> {
        let mut store = ParameterStore::new();
        for spec in &self.specs {
            let tensor = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape)?,
                Init::Ones => Tensor::ones(&spec.shape)?,
                Init::Uniform(bound) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &spec.name));
                    let dist = Uniform::new_inclusive(-bound, bound);
                    Tensor::from_fn(&spec.shape, |_| T::from_f64_lossy(dist.sample(&mut rng)))?
                }
            };
            store.insert(spec.name.clone(), tensor, spec.trainable)?;
        }
        Ok(store)
    }
}

/// FNV-1a over the name, mixed with the seed.
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Joins hierarchical parameter names with `.`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalisation; running statistics are updated.
    Train,
    /// Running statistics for normalisation.
    Eval,
}

/// Forward-pass context: the graph being recorded, the parameters it reads,
/// and the buffer updates it produces.
///
/// Buffer updates (batch-norm running statistics) are collected rather than
/// written so the store is only mutated between steps.
pub struct Scope<'a, T> {
    pub graph: &'a mut Graph<T>,
    store: &'a ParameterStore<T>,
    mode: Mode,
    placed: HashMap<String, Var>,
    updates: Vec<(String, Tensor<T>)>,
}

impl<'a, T: Element> Scope<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, store: &'a ParameterStore<T>, mode: Mode) -> Self {
        Scope {
            graph,
            store,
            mode,
            placed: HashMap::new(),
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Places the named parameter on the graph once; later calls reuse it.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.placed.get(name) {
            return Ok(v);
        }
        let tensor = self.store.get(name)?.clone();
        let v = if self.store.is_trainable(name) {
            self.graph.param(name, tensor)
        } else {
            self.graph.constant(tensor)
        };
        self.placed.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.store.get(name)
    }

    pub fn record_update(&mut self, name: String, value: Tensor<T>) {
        self.updates.push((name, value));
    }

    pub fn take_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.updates)
    }
}

/// Applies collected buffer updates to a store.
pub fn apply_updates<T: Element>(store: &mut ParameterStore<T>, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
    for (name, value) in updates {
        store.set(&name, value)?;
    }
    Ok(())
}

/// A network piece with deterministic parameter names and pure shape inference.
pub trait Module {
    fn declare(&self, prefix: &str, decl: &mut Declarations);

    fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, prefix: &str, x: Var) -> Result<Var>;

    /// Output `[N, C, H, W]` for an input shape, without running anything.
    fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instantiation_is_order_independent() {
        let mut a = Declarations::new();
        a.param("x.weight".into(), &[3, 3], Init::Uniform(1.0));
        a.param("y.weight".into(), &[2], Init::Uniform(1.0));
        let mut b = Declarations::new();
        b.param("y.weight".into(), &[2], Init::Uniform(1.0));
        b.param("x.weight".into(), &[3, 3], Init::Uniform(1.0));
        let sa = a.instantiate::<f32>(7).unwrap();
        let sb = b.instantiate::<f32>(7).unwrap();
        assert_eq!(sa, sb);
        let sc = a.instantiate::<f32>(8).unwrap();
        assert_ne!(sa, sc);
    }

    #[test]
    fn counts_only_trainable() {
        let mut d = Declarations::new();
        d.param("w".into(), &[4, 5], Init::Zeros);
        d.buffer("m".into(), &[5], Init::Zeros);
        assert_eq!(d.trainable_count(), 20);
    }
}
