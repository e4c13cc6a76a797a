//! Classification-perspective scene text recognition (CSTR) on a small
//! tensor + reverse-mode autodiff engine.

pub mod ablation;
pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod nn;
pub mod params;
pub mod report;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::ParameterStore;
pub use tensor::{Element, Precision, Tensor};
pub use backbone::{AblationToggles, Backbone, BackboneConfig, BackboneProfile, ProfileKind};
pub use heads::{Head, HeadKind};
pub use model::{Cstr, LossKind, ModelConfig};
pub use config::{Ini, RunConfig};
