//! Synthetic word images: bitmap-font rendering, augmentation and the
//! on-disk dataset format.

mod augment;
mod dataset;
pub mod font;
mod image;
mod render;

pub use augment::{add_noise, augment, motion_blur, motion_kernel, AugmentConfig};
pub use dataset::{
    build_dataset, generate_sample, sample_seed, Dataset, DatasetSpec, Manifest, ManifestEntry, Split,
    DEFAULT_LEXICON, MANIFEST_FILE,
};
pub(crate) use dataset::hex;
pub use image::GrayImage;
pub use render::{render_word, Sample, MIN_CONTRAST};
