use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::ctc::collapse_path;
use super::Alphabet;

fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        // Strict comparison: ties resolve to the lowest class index.
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn frames_argmax<T: Element>(data: &[T], classes: usize) -> Vec<usize> {
    data.chunks(classes).map(argmax).collect()
}

/// Per-position argmax over `N × k × V` logits, truncated at the first end token.
pub fn decode_ce<T: Element>(logits: &Tensor<T>, alphabet: &Alphabet) -> Result<Vec<String>> {
    let [n, k, v] = *logits.shape() else {
        return Err(Error::shape("decode_ce", format!("expected N×k×V, got {:?}", logits.shape())));
    };
    Ok((0..n)
        .map(|i| {
            let picks = frames_argmax(&logits.data()[i * k * v..(i + 1) * k * v], v);
            let end = picks.iter().position(|&c| c == alphabet.special()).unwrap_or(k);
            alphabet.decode(&picks[..end])
        })
        .collect())
}

/// Best-path decoding of `T × V` logits: argmax per frame, merge repeats,
/// drop blanks.
pub fn decode_ctc<T: Element>(logits: &Tensor<T>, alphabet: &Alphabet) -> Result<String> {
    let [_, v] = *logits.shape() else {
        return Err(Error::shape("decode_ctc", format!("expected T×V, got {:?}", logits.shape())));
    };
    let path = frames_argmax(logits.data(), v);
    Ok(alphabet.decode(&collapse_path(&path, alphabet.special())))
}

/// [`decode_ctc`] over each sample of `N × T × V` logits.
pub fn decode_ctc_batch<T: Element>(logits: &Tensor<T>, alphabet: &Alphabet) -> Result<Vec<String>> {
    let [n, t, v] = *logits.shape() else {
        return Err(Error::shape("decode_ctc", format!("expected N×T×V, got {:?}", logits.shape())));
    };
    (0..n)
        .map(|i| {
            let frame = Tensor::new(&[t, v], logits.data()[i * t * v..(i + 1) * t * v].to_vec())?;
            decode_ctc(&frame, alphabet)
        })
        .collect()
}
