use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::augment::add_noise;
use super::image::GrayImage;
use super::render::render_word;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::text::Alphabet;

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Built-in 50-word lexicon: 3–7 characters, letters and digits.
pub const DEFAULT_LEXICON: [&str; 50] = [
    "cat", "dog", "house", "tree", "river", "stone", "light", "water", "green", "paper",
    "music", "table", "cloud", "horse", "bread", "chair", "plant", "train", "glass", "night",
    "apple", "field", "smile", "sugar", "brick", "world", "north", "eagle", "lemon", "quiz",
    "jazz", "vivid", "zebra", "kayak", "pixel", "mango", "tiger", "ocean", "flame", "crown",
    "box42", "route66", "2024", "b52", "door7", "x9y", "gold", "wind", "snow", "7up",
];

/// Per-sample seed from the global seed, a split stream and an index
/// (SplitMix64 finaliser over the packed counter).
pub fn sample_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Eval => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Dataset(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub lexicon: Vec<String>,
    pub n_train: usize,
    pub n_eval: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Gaussian noise σ baked into eval images (0 for clean eval data).
    pub eval_noise: f64,
}

impl DatasetSpec {
    /// 50-word toy dataset: 2000 train / 500 eval on a 16×64 canvas.
    pub fn toy(seed: u64) -> Self {
        DatasetSpec {
            lexicon: DEFAULT_LEXICON.iter().map(|w| w.to_string()).collect(),
            n_train: 2000,
            n_eval: 500,
            height: 16,
            width: 64,
            seed,
            eval_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\n", e.path, e.label, e.split, e.seed))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let bad = |why: &str| Error::Dataset(format!("manifest line {}: {why}", i + 1));
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 4 {
                    return Err(bad(&format!("expected 4 tab-separated fields, got {}", f.len())));
                }
                Ok(ManifestEntry {
                    path: f[0].to_string(),
                    label: f[1].to_string(),
                    split: f[2].parse().map_err(|_| bad(&format!("unknown split `{}`", f[2])))?,
                    seed: f[3].parse().map_err(|_| bad(&format!("bad seed `{}`", f[3])))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifest { entries })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// SHA-256 of the manifest text, hex encoded.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_tsv().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders one sample of a split without touching the disk.
pub fn generate_sample(spec: &DatasetSpec, split: Split, index: usize) -> Result<(GrayImage, String, u64)> {
    let seed = sample_seed(spec.seed, split.stream(), index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = &spec.lexicon[rng.gen_range(0..spec.lexicon.len())];
    let sample = render_word(word, spec.height, spec.width, rng.gen())?;
    let mut image = sample.image;
    if split == Split::Eval && spec.eval_noise > 0.0 {
        image = add_noise(&image, spec.eval_noise, &mut rng).quantized();
    }
    Ok((image, sample.label, seed))
}

/// Writes `train/NNNNNN.pgm`, `eval/NNNNNN.pgm` and `manifest.tsv` under
/// `out_dir`. Output is a pure function of `spec`.
pub fn build_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    if spec.lexicon.is_empty() {
        return Err(Error::Dataset("lexicon is empty".into()));
    }
    let alphabet = Alphabet::default();
    for w in &spec.lexicon {
        if w.is_empty() || !alphabet.contains_word(w) {
            return Err(Error::Dataset(format!("lexicon word {w:?} is not over the alphabet")));
        }
    }
    let mut manifest = Manifest::default();
    for (split, count) in [(Split::Train, spec.n_train), (Split::Eval, spec.n_eval)] {
        let dir = out_dir.join(split.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..count {
            let (image, label, seed) = generate_sample(spec, split, i)?;
            let rel = format!("{split}/{i:06}.pgm");
            image.write_pgm(&out_dir.join(&rel))?;
            manifest.entries.push(ManifestEntry {
                path: rel,
                label,
                split,
                seed,
            });
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Images of one split, held in memory at the model's input size.
#[derive(Clone, Debug)]
pub struct Dataset {
    height: usize,
    width: usize,
    images: Vec<GrayImage>,
    labels: Vec<String>,
}

impl Dataset {
    pub fn from_samples(height: usize, width: usize, samples: Vec<(GrayImage, String)>) -> Result<Self> {
        let mut images = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for (img, label) in samples {
            images.push(img.resize(height, width)?);
            labels.push(label);
        }
        Ok(Dataset {
            height,
            width,
            images,
            labels,
        })
    }

    /// Loads a split from a dataset directory, resizing to `height × width`.
    pub fn load(dir: &Path, manifest: &Manifest, split: Split, height: usize, width: usize) -> Result<Self> {
        let samples = manifest
            .split(split)
            .map(|e| {
                let path: PathBuf = dir.join(&e.path);
                Ok((GrayImage::read_pgm(&path)?, e.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(height, width, samples)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &GrayImage {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Stacks the given images into an `N×1×H×W` tensor.
    pub fn batch<T: Element>(&self, images: &[&GrayImage]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(images.len() * self.height * self.width);
        for img in images {
            data.extend(img.pixels().iter().map(|&p| T::from_f64_lossy(f64::from(p))));
        }
        Tensor::new(&[images.len(), 1, self.height, self.width], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_is_valid() {
        let a = Alphabet::default();
        for w in DEFAULT_LEXICON {
            assert!((3..=7).contains(&w.len()), "{w}");
            assert!(a.contains_word(w));
        }
        let mut sorted = DEFAULT_LEXICON.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
    }

    #[test]
    fn seeds_differ_across_streams() {
        assert_ne!(sample_seed(1, 1, 0), sample_seed(1, 2, 0));
        assert_ne!(sample_seed(1, 1, 0), sample_seed(1, 1, 1));
        assert_ne!(sample_seed(1, 1, 0), sample_seed(2, 1, 0));
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![ManifestEntry {
                path: "train/000000.pgm".into(),
                label: "cat".into(),
                split: Split::Train,
                seed: 17,
            }],
        };
        assert_eq!(Manifest::parse(&m.to_tsv()).unwrap(), m);
        assert!(Manifest::parse("a\tb\tc\n").is_err());
        assert!(Manifest::parse("a\tb\ttest\t1\n").is_err());
    }
}
