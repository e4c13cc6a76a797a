use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{Element, Tensor};

/// Adadelta with an external learning-rate multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta<T: Element> {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    /// Running mean of squared gradients per parameter.
    pub sq_grad: BTreeMap<String, Tensor<T>>,
    /// Running mean of squared updates per parameter.
    pub sq_delta: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Adadelta<T> {
    pub fn new(rho: f64, eps: f64, lr: f64) -> Self {
        Adadelta {
            rho,
            eps,
            lr,
            sq_grad: BTreeMap::new(),
            sq_delta: BTreeMap::new(),
        }
    }

    /// ρ = 0.95, ε = 1e-6, lr = 1.
    pub fn standard() -> Self {
        Self::new(0.95, 1e-6, 1.0)
    }

    /// Zero accumulators for every trainable parameter.
    pub fn init(&mut self, store: &ParameterStore<T>) -> Result<()> {
        for (name, t) in store.trainable() {
            self.sq_grad.insert(name.to_string(), Tensor::zeros(t.shape())?);
            self.sq_delta.insert(name.to_string(), Tensor::zeros(t.shape())?);
        }
        Ok(())
    }

    /// One update of every parameter that has a gradient. Nothing is written
    /// if any gradient is non-finite or mis-shaped.
    pub fn step(
        &mut self,
        store: &mut ParameterStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr_scale: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let p = store.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adadelta",
                    format!("`{name}` is {:?} but its gradient is {:?}", p.shape(), g.shape()),
                ));
            }
        }
        let (rho, eps, scale) = (self.rho, self.eps, self.lr * lr_scale);
        for (name, g) in grads {
            let shape = g.shape().to_vec();
            let sg = self
                .sq_grad
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape).expect("valid shape"));
            let sd = self
                .sq_delta
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&shape).expect("valid shape"));
            let param = store.get_mut(name)?;
            let (sg, sd, x) = (sg.data_mut(), sd.data_mut(), param.data_mut());
            for i in 0..x.len() {
                let gi = g.data()[i].to_f64_lossy();
                let eg = rho * sg[i].to_f64_lossy() + (1.0 - rho) * gi * gi;
                let dx = -((sd[i].to_f64_lossy() + eps).sqrt() / (eg + eps).sqrt()) * gi;
                let ed = rho * sd[i].to_f64_lossy() + (1.0 - rho) * dx * dx;
                sg[i] = T::from_f64_lossy(eg);
                sd[i] = T::from_f64_lossy(ed);
                x[i] = T::from_f64_lossy(x[i].to_f64_lossy() + scale * dx);
            }
        }
        Ok(())
    }
}
