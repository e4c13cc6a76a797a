/// Recognition quality over a set of predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub word_accuracy: f64,
    pub mean_normalized_edit_distance: f64,
}

/// Levenshtein distance over `char`s.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Case-insensitive exact-match rate and mean `levenshtein / max(len)`.
///
/// # Panics
/// If the two slices differ in length.
pub fn metrics<S: AsRef<str>, R: AsRef<str>>(predictions: &[S], references: &[R]) -> Metrics {
    assert_eq!(predictions.len(), references.len(), "prediction/reference count");
    if predictions.is_empty() {
        return Metrics::default();
    }
    let mut correct = 0usize;
    let mut dist = 0.0;
    for (p, r) in predictions.iter().zip(references) {
        let p = p.as_ref().to_lowercase();
        let r = r.as_ref().to_lowercase();
        correct += usize::from(p == r);
        let longest = p.chars().count().max(r.chars().count());
        if longest > 0 {
            dist += edit_distance(&p, &r) as f64 / longest as f64;
        }
    }
    let n = predictions.len() as f64;
    Metrics {
        word_accuracy: correct as f64 / n,
        mean_normalized_edit_distance: dist / n,
    }
}
