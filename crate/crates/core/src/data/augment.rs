use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::GrayImage;
use crate::error::{Error, Result};

/// Motion blur, Gaussian noise and brightness/contrast jitter, each applied
/// independently with probability `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p: f64,
    /// Candidate blur lengths in pixels; 1 is no blur.
    pub blur_lengths: Vec<usize>,
    pub blur_angles_deg: Vec<f64>,
    /// Noise σ is drawn uniformly from `[0, noise_sigma]`.
    pub noise_sigma: f64,
    /// Brightness offset drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Contrast change drawn from `[-contrast, contrast]`.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p: 0.5,
            blur_lengths: vec![1, 3, 5],
            blur_angles_deg: vec![0.0, 45.0, 90.0, 135.0],
            noise_sigma: 0.05,
            brightness: 0.2,
            contrast: 0.2,
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every image unchanged.
    pub fn identity() -> Self {
        AugmentConfig {
            p: 1.0,
            blur_lengths: vec![1],
            blur_angles_deg: vec![0.0],
            noise_sigma: 0.0,
            brightness: 0.0,
            contrast: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p)
            && !self.blur_lengths.is_empty()
            && !self.blur_lengths.contains(&0)
            && !self.blur_angles_deg.is_empty()
            && self.noise_sigma >= 0.0
            && self.brightness >= 0.0
            && self.contrast >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation config {self:?}")))
        }
    }
}

/// Integer offsets of a normalised line kernel of `length` taps at `angle`.
pub fn motion_kernel(length: usize, angle_deg: f64) -> Vec<(isize, isize, f32)> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let half = (length as f64 - 1.0) / 2.0;
    let w = 1.0 / length as f32;
    (0..length)
        .map(|i| {
            let t = i as f64 - half;
            ((-t * s).round() as isize, (t * c).round() as isize, w)
        })
        .collect()
}

/// Convolves with a line kernel, clamping at the borders.
pub fn motion_blur(img: &GrayImage, length: usize, angle_deg: f64) -> GrayImage {
    if length <= 1 {
        return img.clone();
    }
    let kernel = motion_kernel(length, angle_deg);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let v: f32 = kernel
                .iter()
                .map(|&(dy, dx, k)| k * img.get((y + dy).clamp(0, h - 1) as usize, (x + dx).clamp(0, w - 1) as usize))
                .sum();
            out.pixels_mut()[(y * w + x) as usize] = v;
        }
    }
    out
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma`, then clamps.
pub fn add_noise(img: &GrayImage, sigma: f64, rng: &mut impl Rng) -> GrayImage {
    let mut out = img.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for p in out.pixels_mut() {
            *p = (f64::from(*p) + normal.sample(rng)).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Applies the configured augmentations; deterministic given `seed`.
pub fn augment(img: &GrayImage, config: &AugmentConfig, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    if rng.gen_bool(config.p) {
        let length = *config.blur_lengths.choose(&mut rng).expect("validated");
        let angle = *config.blur_angles_deg.choose(&mut rng).expect("validated");
        out = motion_blur(&out, length, angle);
    }
    if rng.gen_bool(config.p) {
        let sigma = rng.gen::<f64>() * config.noise_sigma;
        out = add_noise(&out, sigma, &mut rng);
    }
    if rng.gen_bool(config.p) {
        let dc = (rng.gen::<f64>() * 2.0 - 1.0) * config.contrast;
        let db = (rng.gen::<f64>() * 2.0 - 1.0) * config.brightness;
        for p in out.pixels_mut() {
            *p = (f64::from(*p) * (1.0 + dc) + db) as f32;
        }
    }
    for p in out.pixels_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render_word;

    fn sample() -> GrayImage {
        render_word("blur", 16, 64, 3).unwrap().image
    }

    #[test]
    fn identity_config_is_identity() {
        let img = sample();
        for seed in 0..10 {
            assert_eq!(augment(&img, &AugmentConfig::identity(), seed), img);
        }
    }

    #[test]
    fn kernels_sum_to_one_and_preserve_constants() {
        for l in [1, 3, 5, 7] {
            for a in [0.0, 45.0, 90.0, 135.0] {
                let total: f32 = motion_kernel(l, a).iter().map(|k| k.2).sum();
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
        let flat = GrayImage::filled(16, 64, 0.37).unwrap();
        let b = motion_blur(&flat, 5, 45.0);
        assert!(b.pixels().iter().all(|&p| (p - 0.37).abs() < 1e-6));
    }

    #[test]
    fn contrast_jitter_keeps_constant_images_constant() {
        let flat = GrayImage::filled(4, 8, 0.5).unwrap();
        let cfg = AugmentConfig {
            p: 1.0,
            blur_lengths: vec![1],
            noise_sigma: 0.0,
            brightness: 0.0,
            ..AugmentConfig::default()
        };
        let out = augment(&flat, &cfg, 9);
        let first = out.pixels()[0];
        assert!(out.pixels().iter().all(|&p| p == first));
    }

    #[test]
    fn seeded_and_clamped() {
        let img = sample();
        let cfg = AugmentConfig {
            p: 1.0,
            noise_sigma: 0.5,
            ..AugmentConfig::default()
        };
        let a = augment(&img, &cfg, 11);
        assert_eq!(a, augment(&img, &cfg, 11));
        assert_ne!(a, augment(&img, &cfg, 12));
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
