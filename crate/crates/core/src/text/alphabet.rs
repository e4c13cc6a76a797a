use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const SYMBOLS: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Lower-case letters and digits plus one special class at the last index.
///
/// The special class is the end token for CE models and the blank for CTC
/// models; both use index 36 so the two heads share an output layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet {
            symbols: SYMBOLS.chars().collect(),
        }
    }
}

impl Alphabet {
    /// Number of printable symbols (36).
    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    /// Output classes including the special token (37).
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Index of the end token / CTC blank.
    pub fn special(&self) -> usize {
        self.symbols.len()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        let c = c.to_ascii_lowercase();
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        word.chars().all(|c| self.index_of(c).is_some())
    }

    /// Case-insensitive encoding; rejects characters outside the alphabet.
    pub fn encode(&self, word: &str) -> Result<Vec<usize>> {
        word.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Dataset(format!("character {c:?} in {word:?} is not in the alphabet")))
            })
            .collect()
    }

    /// Maps indices back to text, skipping the special class.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.symbol(i)).collect()
    }

    pub fn canonical(&self, word: &str) -> String {
        word.to_ascii_lowercase()
    }
}

/// Fixed-length label matrix: every position at or past a word's length holds
/// the special class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelBatch {
    indices: Vec<usize>,
    lengths: Vec<usize>,
    positions: usize,
}

impl LabelBatch {
    pub fn from_words<S: AsRef<str>>(alphabet: &Alphabet, words: &[S], positions: usize) -> Result<Self> {
        let mut indices = Vec::with_capacity(words.len() * positions);
        let mut lengths = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            let enc = alphabet.encode(w)?;
            if enc.len() > positions {
                return Err(Error::Dataset(format!(
                    "word {w:?} has {} characters, more than the {positions} output positions",
                    enc.len()
                )));
            }
            lengths.push(enc.len());
            indices.extend(enc.iter().copied());
            indices.extend(std::iter::repeat(alphabet.special()).take(positions - enc.len()));
        }
        Ok(LabelBatch {
            indices,
            lengths,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Padded row for sample `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.positions..(i + 1) * self.positions]
    }

    /// Unpadded symbol sequences, as CTC consumes them.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        (0..self.len())
            .map(|i| self.row(i)[..self.lengths[i]].to_vec())
            .collect()
    }

    /// One-hot targets `N × positions × classes`.
    pub fn one_hot<T: Element>(&self, classes: usize) -> Result<Tensor<T>> {
        let mut data = vec![T::zero(); self.indices.len() * classes];
        for (p, &c) in self.indices.iter().enumerate() {
            data[p * classes + c] = T::one();
        }
        Tensor::new(&[self.len(), self.positions, classes], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_layout() {
        let a = Alphabet::default();
        assert_eq!(a.num_classes(), 37);
        assert_eq!(a.special(), 36);
        assert_eq!(a.encode("Cat9").unwrap(), vec![2, 0, 19, 35]);
        assert!(a.encode("c-t").is_err());
        assert_eq!(a.decode(&[2, 0, 19, 36]), "cat");
    }

    #[test]
    fn labels_pad_with_end_token() {
        let a = Alphabet::default();
        let b = LabelBatch::from_words(&a, &["ab", "c"], 4).unwrap();
        assert_eq!(b.row(0), &[0, 1, 36, 36]);
        assert_eq!(b.row(1), &[2, 36, 36, 36]);
        assert_eq!(b.sequences(), vec![vec![0, 1], vec![2]]);
        assert!(LabelBatch::from_words(&a, &["abcde"], 4).is_err());
    }
}
