use ndarray::Array2;
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Number of symbols: unknown placeholder, space, `A`-`Z`, `a`-`z`.
pub const VOCAB_SIZE: usize = 54;

/// Index of the unknown-character placeholder.
pub const UNKNOWN: usize = 0;

/// Fixed 54-symbol character set, ordered `[unknown, space, A-Z, a-z]`.
///
/// The order is part of the checkpoint format: synthesis weights are only
/// meaningful with the same mapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary;

impl Vocabulary {
    pub fn size(&self) -> usize {
        VOCAB_SIZE
    }

    /// Total mapping; characters outside the set go to [`UNKNOWN`].
    pub fn index(&self, c: char) -> usize {
        match c {
            ' ' => 1,
            'A'..='Z' => 2 + (c as usize - 'A' as usize),
            'a'..='z' => 28 + (c as usize - 'a' as usize),
            _ => UNKNOWN,
        }
    }

    /// Symbol at `index`; `None` for the unknown slot and out-of-range values.
    pub fn symbol(&self, index: usize) -> Option<char> {
        match index {
            1 => Some(' '),
            2..=27 => Some((b'A' + (index - 2) as u8) as char),
            28..=53 => Some((b'a' + (index - 28) as u8) as char),
            _ => None,
        }
    }

    pub fn contains(&self, c: char) -> bool {
        self.index(c) != UNKNOWN
    }
}

/// One-hot text encoding, stored as row indices into the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoding {
    indices: Vec<usize>,
}

impl TextEncoding {
    pub fn from_indices(indices: Vec<usize>) -> Self {
        assert!(indices.iter().all(|&i| i < VOCAB_SIZE));
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of characters `U`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The `U x 54` one-hot matrix.
    pub fn matrix<F: Float>(&self) -> Array2<F> {
        let mut m = Array2::zeros((self.indices.len(), VOCAB_SIZE));
        for (u, &i) in self.indices.iter().enumerate() {
            m[[u, i]] = F::one();
        }
        m
    }
}

/// Decodes back to characters, `?` for unknown slots.
impl std::fmt::Display for TextEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &i in &self.indices {
            write!(f, "{}", Vocabulary.symbol(i).unwrap_or('?'))?;
        }
        Ok(())
    }
}

/// Encodes `text` one character per row.
pub fn encode_text(text: &str, vocab: &Vocabulary) -> TextEncoding {
    TextEncoding {
        indices: text.chars().map(|c| vocab.index(c)).collect(),
    }
}
