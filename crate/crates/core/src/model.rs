//! The full recogniser: backbone, prediction head, loss and greedy decoding.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::backbone::{AblationToggles, Backbone, BackboneConfig, ProfileKind};
use crate::error::{Error, Result};
use crate::heads::{Head, HeadKind};
use crate::nn::{apply_updates, Declarations, Mode, Scope};
use crate::params::ParameterStore;
use crate::tensor::{Element, Tensor};
use crate::text::{ce_loss, decode_ce, decode_ctc_batch, Alphabet, LabelBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ce,
    Ctc,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Ctc => "ctc",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "ctc" => Ok(LossKind::Ctc),
            other => Err(Error::Config(format!("unknown loss `{other}` (expected ce|ctc)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub profile: ProfileKind,
    pub toggles: AblationToggles,
    pub head: HeadKind,
    pub loss: LossKind,
    /// Maximum word length `k` (SPPN positions).
    pub max_len: usize,
}

impl ModelConfig {
    /// Full-size configuration: CE + SPPN, EM and SADM on, k = 25.
    pub fn paper() -> Self {
        ModelConfig {
            profile: ProfileKind::Paper,
            toggles: AblationToggles::FULL,
            head: HeadKind::Sppn,
            loss: LossKind::Ce,
            max_len: 25,
        }
    }

    /// Full configuration on the toy profile, k = 8.
    pub fn toy() -> Self {
        ModelConfig {
            profile: ProfileKind::Toy,
            max_len: 8,
            ..Self::paper()
        }
    }

    /// `key = value` lines in a fixed order; used for fingerprints and
    /// checkpoint headers.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("profile", self.profile.to_string()),
            ("em", self.toggles.em.to_string()),
            ("sadm", self.toggles.sadm.to_string()),
            ("head", self.head.to_string()),
            ("loss", self.loss.to_string()),
            ("max_len", self.max_len.to_string()),
        ]
    }
}

/// A model bound to its configuration; parameters live in a separate store.
#[derive(Clone, Debug)]
pub struct Cstr {
    config: ModelConfig,
    alphabet: Alphabet,
    backbone: Backbone,
    head: Head,
}

impl Cstr {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let backbone = Backbone::new(BackboneConfig::from_toggles(config.profile, config.toggles))?;
        let alphabet = Alphabet::default();
        let (h, w) = backbone.input_size();
        let feature = backbone.output_shape([1, 1, h, w])?;
        let head = Head::new(config.head, feature, config.max_len, alphabet.num_classes())?;
        Ok(Cstr {
            config,
            alphabet,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// Input `(H, W)` expected by the backbone.
    pub fn input_size(&self) -> (usize, usize) {
        self.backbone.input_size()
    }

    /// Output positions per sample: frames for CTC, characters for CE.
    pub fn positions(&self) -> usize {
        self.head.positions()
    }

    pub fn declarations(&self) -> Declarations {
        let mut decl = Declarations::new();
        self.backbone.declare("backbone", &mut decl);
        self.head.declare("head", &mut decl);
        decl
    }

    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ParameterStore<T>> {
        self.declarations().instantiate(seed)
    }

    pub fn parameter_count(&self) -> usize {
        self.declarations().trainable_count()
    }

    /// Logits `[N, P, V]` for an output shape inferred without running.
    pub fn output_shape(&self, batch: usize) -> Result<[usize; 3]> {
        let (h, w) = self.input_size();
        let f = self.backbone.output_shape([batch, 1, h, w])?;
        self.head.output_shape(f)
    }

    /// `N×1×H×W` images → `N×P×V` logits.
    pub fn forward<T: Element>(&self, scope: &mut Scope<'_, T>, images: Var) -> Result<Var> {
        let s = scope.graph.shape(images).to_vec();
        let (h, w) = self.input_size();
        if s.len() != 4 || s[1] != 1 || s[2] != h || s[3] != w {
            return Err(Error::shape("model", format!("expected N×1×{h}×{w} images, got {s:?}")));
        }
        let f = self.backbone.forward(scope, "backbone", images)?;
        self.head.forward(scope, "head", f)
    }

    /// Scalar training loss for a batch of words.
    pub fn loss<T: Element, S: AsRef<str>>(
        &self,
        g: &mut Graph<T>,
        logits: Var,
        words: &[S],
        smoothing: f64,
    ) -> Result<Var> {
        match self.config.loss {
            LossKind::Ce => {
                let labels = LabelBatch::from_words(&self.alphabet, words, self.positions())?;
                ce_loss(g, logits, &labels, smoothing)
            }
            LossKind::Ctc => {
                let labels = words
                    .iter()
                    .map(|w| self.alphabet.encode(w.as_ref()))
                    .collect::<Result<Vec<_>>>()?;
                let lp = g.log_softmax(logits, 2)?;
                g.ctc_loss(lp, &labels, self.alphabet.special())
            }
        }
    }

    pub fn decode<T: Element>(&self, logits: &Tensor<T>) -> Result<Vec<String>> {
        match self.config.loss {
            LossKind::Ce => decode_ce(logits, &self.alphabet),
            LossKind::Ctc => decode_ctc_batch(logits, &self.alphabet),
        }
    }

    /// Eval-mode logits for a batch of images.
    pub fn logits<T: Element>(&self, store: &ParameterStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let mut scope = Scope::new(&mut g, store, Mode::Eval);
        let y = self.forward(&mut scope, x)?;
        Ok(g.value(y).clone())
    }

    pub fn predict<T: Element>(&self, store: &ParameterStore<T>, images: &Tensor<T>) -> Result<Vec<String>> {
        self.decode(&self.logits(store, images)?)
    }

    /// One train-mode forward/backward: returns the loss and the gradient of
    /// every trainable parameter, and applies the running-statistic updates.
    pub fn loss_and_grads<T: Element, S: AsRef<str>>(
        &self,
        store: &mut ParameterStore<T>,
        images: &Tensor<T>,
        words: &[S],
        smoothing: f64,
    ) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let (logits, updates) = {
            let mut scope = Scope::new(&mut g, store, Mode::Train);
            let logits = self.forward(&mut scope, x)?;
            (logits, scope.take_updates())
        };
        let loss = self.loss(&mut g, logits, words, smoothing)?;
        let value = g.value(loss).item()?.to_f64_lossy();
        let grads = g.backward(loss)?.params();
        apply_updates(store, updates)?;
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_output_shape() {
        let m = Cstr::new(ModelConfig::toy()).unwrap();
        assert_eq!(m.input_size(), (16, 64));
        assert_eq!(m.output_shape(1).unwrap(), [1, 8, 37]);
    }

    #[test]
    fn toy_forward_runs_and_loss_is_finite() {
        let m = Cstr::new(ModelConfig::toy()).unwrap();
        let mut store = m.init_params::<f32>(3).unwrap();
        let images = Tensor::from_fn(&[2, 1, 16, 64], |i| ((i * 7919) % 255) as f32 / 255.0).unwrap();
        let (loss, grads) = m.loss_and_grads(&mut store, &images, &["cat", "dog42"], 0.1).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(grads.len(), store.trainable().count());
        let words = m.predict(&store, &images).unwrap();
        assert_eq!(words.len(), 2);
    }

    #[test]
    fn config_round_trips_through_strings() {
        for e in ModelConfig::toy().entries() {
            match e.0 {
                "head" => assert_eq!(e.1.parse::<HeadKind>().unwrap(), HeadKind::Sppn),
                "loss" => assert_eq!(e.1.parse::<LossKind>().unwrap(), LossKind::Ce),
                "profile" => assert_eq!(e.1.parse::<ProfileKind>().unwrap(), ProfileKind::Toy),
                _ => {}
            }
        }
    }
}
