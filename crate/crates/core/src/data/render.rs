use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::font::{glyph, text_width, GLYPH_HEIGHT, GLYPH_SPACING, GLYPH_WIDTH};
use super::image::GrayImage;
use crate::error::{Error, Result};

/// A rendered word image and the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: String,
    pub seed: u64,
}

/// Minimum foreground/background gray-level difference.
pub const MIN_CONTRAST: f32 = 0.4;
/// Sub-samples per pixel axis for anti-aliasing.
const SUPERSAMPLE: usize = 4;

/// Rasterises `word` onto a `height × width` canvas.
///
/// Scale, aspect, position and gray levels are drawn from a generator seeded
/// by `seed`; the word always fits with a one-pixel margin.
pub fn render_word(word: &str, height: usize, width: usize, seed: u64) -> Result<Sample> {
    if word.is_empty() {
        return Err(Error::Render("cannot render an empty word".into()));
    }
    let masks = word
        .chars()
        .map(|c| glyph(c).ok_or_else(|| Error::Render(format!("no glyph for {c:?} in {word:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let (tw, th) = (text_width(masks.len()) as f64, GLYPH_HEIGHT as f64);
    let (avail_w, avail_h) = (width.saturating_sub(2) as f64, height.saturating_sub(2) as f64);
    let fit = (avail_w / tw).min(avail_h / th);
    if fit < 1.0 {
        return Err(Error::Render(format!(
            "{word:?} needs at least {}×{} pixels, canvas is {height}×{width}",
            GLYPH_HEIGHT + 2,
            text_width(masks.len()) + 2
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(fit.min(1.0 + 0.6 * (fit - 1.0)).max(1.0)..=fit);
    let sy = scale;
    let sx = (scale * rng.gen_range(0.85..=1.0)).max(1.0);
    let (text_w, text_h) = (tw * sx, th * sy);
    let x0 = 1.0 + rng.gen_range(0.0..=(avail_w - text_w).max(0.0));
    let y0 = 1.0 + rng.gen_range(0.0..=(avail_h - text_h).max(0.0));
    let (fg, bg) = loop {
        let a: f32 = rng.gen();
        let b: f32 = rng.gen();
        if (a - b).abs() >= MIN_CONTRAST {
            break (a, b);
        }
    };

    let ink = |u: f64, v: f64| -> bool {
        // (u, v) in unit-scale glyph space.
        if u < 0.0 || v < 0.0 || v >= th || u >= tw {
            return false;
        }
        let (col, row) = (u as usize, v as usize);
        let cell = GLYPH_WIDTH + GLYPH_SPACING;
        let (idx, within) = (col / cell, col % cell);
        within < GLYPH_WIDTH && masks[idx][row][within]
    };
    let mut pixels = Vec::with_capacity(height * width);
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in 0..height {
        for px in 0..width {
            let mut hits = 0usize;
            for sy_i in 0..SUPERSAMPLE {
                for sx_i in 0..SUPERSAMPLE {
                    let y = py as f64 + (sy_i as f64 + 0.5) * step;
                    let x = px as f64 + (sx_i as f64 + 0.5) * step;
                    if ink((x - x0) / sx, (y - y0) / sy) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            pixels.push(bg + (fg - bg) * cover);
        }
    }
    Ok(Sample {
        image: GrayImage::new(height, width, pixels)?.quantized(),
        label: word.to_ascii_lowercase(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = render_word("cat", 16, 64, 5).unwrap();
        let b = render_word("cat", 16, 64, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.image.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        assert_ne!(a, render_word("cat", 16, 64, 6).unwrap());
    }

    #[test]
    fn rejects_empty_unknown_and_oversized() {
        assert!(render_word("", 16, 64, 0).is_err());
        assert!(render_word("a-b", 16, 64, 0).is_err());
        assert!(render_word("abcdefghijk", 16, 64, 0).is_err());
        assert!(render_word("a", 8, 64, 0).is_err());
    }

    #[test]
    fn has_visible_ink() {
        let s = render_word("w", 16, 64, 1).unwrap();
        let p = s.image.pixels();
        let (lo, hi) = p.iter().fold((1.0f32, 0.0f32), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo >= MIN_CONTRAST - 1e-2);
    }
}
