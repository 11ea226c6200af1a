use std::collections::HashMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word-to-index table. Index 0 is padding and index 1 the unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    words: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            index: HashMap::new(),
            words: Vec::new(),
        };
        v.words.push(PAD_TOKEN.to_string());
        v.words.push(UNK_TOKEN.to_string());
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        v
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for w in words {
            v.add(w.as_ref());
        }
        v
    }

    /// Adds a normalised word if absent and returns its index.
    pub fn add(&mut self, word: &str) -> usize {
        let word = word.to_lowercase();
        if let Some(&i) = self.index.get(&word) {
            return i;
        }
        let i = self.words.len();
        self.index.insert(word.clone(), i);
        self.words.push(word);
        i
    }

    pub fn get(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Lowercases, turns every non-alphanumeric character into a space, splits
/// on whitespace, then truncates or pads with [`PAD`] to `max_tokens`.
pub fn tokenize(text: &str, max_tokens: usize, vocab: &Vocab) -> Vec<usize> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut out: Vec<usize> = cleaned
        .split_whitespace()
        .take(max_tokens)
        .map(|w| vocab.get(w))
        .collect();
    out.resize(max_tokens, PAD);
    out
}
