use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::EncoderError;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token ↔ index map with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn with_specials() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.push(PAD);
        v.push(UNK);
        v
    }

    fn push(&mut self, token: &str) -> bool {
        if self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        true
    }

    /// Tokens seen at least `min_count` times, most frequent first, ties
    /// broken lexicographically.
    pub fn build<I, S, T>(sequences: I, min_count: usize) -> Result<Self, EncoderError>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_ref().to_string()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(EncoderError::Config(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && t != PAD && t != UNK)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut v = Self::with_specials();
        for (t, _) in ranked {
            v.push(&t);
        }
        Ok(v)
    }

    /// Appends tokens not yet present, keeping every existing index.
    /// Returns how many were added.
    pub fn extend<I: IntoIterator<Item = T>, T: AsRef<str>>(&mut self, tokens: I) -> usize {
        tokens.into_iter().filter(|t| self.push(t.as_ref())).count()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn ids<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EncoderError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[0] != PAD || lines[1] != UNK {
            return Err(EncoderError::Config(format!(
                "vocabulary must start with {PAD} and {UNK}"
            )));
        }
        let mut v = Self::with_specials();
        for (i, line) in lines.iter().enumerate().skip(2) {
            if !v.push(line) {
                return Err(EncoderError::Config(format!(
                    "vocabulary line {}: duplicate token {line:?}",
                    i + 1
                )));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        if let Some(bad) = self
            .tokens
            .iter()
            .find(|t| t.contains(['\n', '\r']) || t.is_empty())
        {
            return Err(EncoderError::Config(format!(
                "token {bad:?} cannot be stored one per line"
            )));
        }
        crate::io::write_atomic(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Lowercases and splits on whitespace; each punctuation character is its own token.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() && !c.is_control() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_count_and_ordering() {
        let v = Vocab::build([vec!["b", "a", "a", "c", "a", "c"], vec!["d"]], 1).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, "a", "c", "b", "d"]);
        let v2 = Vocab::build([vec!["a", "a", "a", "b"]], 2).unwrap();
        assert_eq!(v2.id("a"), 2);
        assert_eq!(v2.id("b"), UNK_ID);
        assert_eq!(v2.id("never"), UNK_ID);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::build(Vec::<Vec<&str>>::new(), 1).is_err());
        assert!(Vocab::build([Vec::<&str>::new()], 1).is_err());
    }

    #[test]
    fn deterministic_and_round_trips_through_text() {
        let corpus = [vec!["x", "y", "z", "y"], vec!["<str>", "<num>", "x"]];
        let v = Vocab::build(corpus.clone(), 1).unwrap();
        assert_eq!(v, Vocab::build(corpus, 1).unwrap());
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocab::from_text("a\nb\n").is_err());
    }

    #[test]
    fn extend_keeps_existing_indices() {
        let mut v = Vocab::build([vec!["a", "b"]], 1).unwrap();
        let before = v.clone();
        assert_eq!(v.extend(["b", "c", "d", "c"]), 2);
        for t in before.tokens() {
            assert_eq!(v.id(t), before.id(t));
        }
        assert_eq!(v.id("d"), 5);
    }

    #[test]
    fn text_tokenization() {
        assert_eq!(
            tokenize_text("Please FIX the null-check, thanks!"),
            ["please", "fix", "the", "null", "-", "check", ",", "thanks", "!"]
        );
        assert!(tokenize_text("   ").is_empty());
    }
}
