use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cstr::data::{
    augment, build_dataset, generate_sample, render_word, AugmentConfig, Dataset, DatasetSpec, GrayImage, Manifest,
    Split, DEFAULT_LEXICON, MANIFEST_FILE, MIN_CONTRAST,
};
use sha2::{Digest, Sha256};

/// SHA-256 of the 8-bit pixels of `render_word("a", 16, 64, 0)`.
const RENDER_A_SEED0: &str = "d6a93ed8c7b51800a71dcd4e2e8a1ecf1d77584a351a132e1843a68674e111c9";

/// χ² critical value for 49 degrees of freedom at p = 0.01.
const CHI2_49_P01: f64 = 74.919;

fn sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn small(seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_train: 40,
        n_eval: 12,
        ..DatasetSpec::toy(seed)
    }
}

fn tree_digest(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for sub in ["train", "eval"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), sha(&fs::read(&p).unwrap()));
        }
    }
    out.insert(MANIFEST_FILE.into(), sha(&fs::read(dir.join(MANIFEST_FILE)).unwrap()));
    out
}

#[test]
fn rendering_fixture() {
    let s = render_word("a", 16, 64, 0).unwrap();
    assert_eq!(s.label, "a");
    assert_eq!((s.image.height(), s.image.width()), (16, 64));
    assert_eq!(sha(&s.image.to_bytes()), RENDER_A_SEED0);
}

#[test]
fn rendering_is_deterministic_and_seed_sensitive() {
    let a = render_word("route66", 16, 64, 5).unwrap();
    let b = render_word("route66", 16, 64, 5).unwrap();
    let c = render_word("route66", 16, 64, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.image, c.image);
}

#[test]
fn rendered_words_have_contrast() {
    for (i, w) in DEFAULT_LEXICON.iter().enumerate() {
        let s = render_word(w, 16, 64, i as u64).unwrap();
        let px = s.image.pixels();
        let lo = px.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = px.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(hi - lo >= MIN_CONTRAST * 0.9, "{w}: {lo}..{hi}");
    }
}

#[test]
fn rendering_rejects_what_cannot_fit() {
    assert!(render_word("", 16, 64, 0).is_err());
    assert!(render_word("abc", 4, 64, 0).is_err());
    assert!(render_word("a#", 16, 64, 0).is_err());
}

#[test]
fn dataset_is_byte_identical_across_builds() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = build_dataset(&small(3), a.path()).unwrap();
    let mb = build_dataset(&small(3), b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.digest(), mb.digest());
    assert_eq!(tree_digest(a.path()), tree_digest(b.path()));
    assert_eq!(Manifest::load(a.path()).unwrap(), ma);

    let c = tempfile::tempdir().unwrap();
    let mc = build_dataset(&small(4), c.path()).unwrap();
    assert_ne!(ma.digest(), mc.digest());
}

#[test]
fn manifest_matches_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small(1);
    let m = build_dataset(&spec, dir.path()).unwrap();
    assert_eq!(m.split(Split::Train).count(), 40);
    assert_eq!(m.split(Split::Eval).count(), 12);
    for (i, e) in m.split(Split::Eval).enumerate() {
        let (img, label, seed) = generate_sample(&spec, Split::Eval, i).unwrap();
        assert_eq!((label.as_str(), seed), (e.label.as_str(), e.seed));
        assert_eq!(GrayImage::read_pgm(&dir.path().join(&e.path)).unwrap(), img.quantized());
    }
    let ds = Dataset::load(dir.path(), &m, Split::Train, 16, 48).unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!((ds.image(0).height(), ds.image(0).width()), (16, 48));
}

#[test]
fn train_labels_are_uniform_over_the_lexicon() {
    let spec = DatasetSpec::toy(0);
    let n = spec.n_train;
    let mut counts: BTreeMap<String, usize> = spec.lexicon.iter().map(|w| (w.clone(), 0)).collect();
    for i in 0..n {
        let (_, label, _) = generate_sample(&spec, Split::Train, i).unwrap();
        *counts.get_mut(&label).expect("label from lexicon") += 1;
    }
    let expected = n as f64 / spec.lexicon.len() as f64;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert_eq!(spec.lexicon.len() - 1, 49);
    assert!(chi2 < CHI2_49_P01, "chi2 = {chi2:.2}");
}

#[test]
fn empty_train_split_gives_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        n_train: 0,
        n_eval: 3,
        ..DatasetSpec::toy(0)
    };
    let m = build_dataset(&spec, dir.path()).unwrap();
    assert_eq!(m.split(Split::Train).count(), 0);
    let loaded = Manifest::load(dir.path()).unwrap();
    assert_eq!(loaded, m);
    assert!(Dataset::load(dir.path(), &loaded, Split::Train, 16, 64).unwrap().is_empty());
}

#[test]
fn bad_lexicons_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for lexicon in [vec![], vec!["ok".to_string(), "no way".to_string()]] {
        let spec = DatasetSpec { lexicon, ..small(0) };
        assert!(build_dataset(&spec, dir.path()).is_err());
    }
}

#[test]
fn eval_noise_changes_only_eval_images() {
    let clean = small(2);
    let noisy = DatasetSpec { eval_noise: 0.1, ..small(2) };
    let (a, _, _) = generate_sample(&clean, Split::Train, 3).unwrap();
    let (b, _, _) = generate_sample(&noisy, Split::Train, 3).unwrap();
    assert_eq!(a, b);
    let (a, la, _) = generate_sample(&clean, Split::Eval, 3).unwrap();
    let (b, lb, _) = generate_sample(&noisy, Split::Eval, 3).unwrap();
    assert_eq!(la, lb);
    assert_ne!(a, b);
}

#[test]
fn identity_augmentation_leaves_images_unchanged() {
    let img = render_word("kayak", 16, 64, 9).unwrap().image;
    for seed in 0..20 {
        assert_eq!(augment(&img, &AugmentConfig::identity(), seed), img);
    }
}

#[test]
fn augmentation_is_deterministic_and_bounded() {
    let img = render_word("zebra", 16, 64, 1).unwrap().image;
    let cfg = AugmentConfig {
        p: 1.0,
        ..AugmentConfig::default()
    };
    let a = augment(&img, &cfg, 7);
    assert_eq!(a, augment(&img, &cfg, 7));
    assert_ne!(a, img);
    assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
}
