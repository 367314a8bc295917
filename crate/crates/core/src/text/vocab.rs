use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest token sequence fed to the sentence encoder.
pub const MAX_WORDS: usize = 25;

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Non-empty list of vocabulary ids, at most [`MAX_WORDS`] long.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::validation("token sequence is empty"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::validation(format!(
                "token id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        let mut ids = ids;
        ids.truncate(MAX_WORDS);
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Token → id map. Id 0 is reserved for out-of-vocabulary words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    ids: BTreeMap<String, usize>,
}

/// Lowercase, replace every non-alphanumeric character with a space, split.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(String::from)
        .collect()
}

impl Vocabulary {
    /// Vocabulary over every word of `texts`, ids assigned in sorted order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all: Vec<String> = texts.into_iter().flat_map(words).collect();
        all.sort();
        all.dedup();
        let mut ids = BTreeMap::new();
        ids.insert(UNK.to_string(), UNK_ID);
        for w in all {
            let next = ids.len();
            ids.entry(w).or_insert(next);
        }
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut v: Vec<(&str, usize)> = self.ids.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        v.sort_by_key(|&(_, id)| id);
        v.into_iter().map(|(k, _)| k).collect()
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let ws = words(text);
        if ws.is_empty() {
            return Err(Error::validation("text is empty after normalization"));
        }
        let ids = ws
            .iter()
            .take(MAX_WORDS)
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect();
        TokenSequence::new(ids, self.len())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format("vocabulary", e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Self = serde_json::from_str(&text).map_err(|e| Error::format("vocabulary", e))?;
        let mut seen: Vec<usize> = v.ids.values().copied().collect();
        seen.sort_unstable();
        if v.id(UNK) != Some(UNK_ID) || seen.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(Error::format("vocabulary", "ids must be dense with <unk> = 0"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig3_caption_has_nine_known_tokens() {
        let query = "The lady was wearing a blue short sleeved blouse";
        let v = Vocabulary::build(["the lady was wearing a blue short-sleeved blouse"]);
        let t = v.tokenize(query).unwrap();
        assert_eq!(t.len(), 9);
        assert!(t.ids().iter().all(|&i| i != UNK_ID));
    }

    #[test]
    fn long_text_is_truncated() {
        let text = (0..30).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let v = Vocabulary::build([text.as_str()]);
        assert_eq!(v.tokenize(&text).unwrap().len(), MAX_WORDS);
    }

    #[test]
    fn empty_text_is_rejected() {
        let v = Vocabulary::build(["a b"]);
        assert!(matches!(v.tokenize(""), Err(Error::Validation(_))));
        assert!(matches!(v.tokenize("  ?! "), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::build(["red dress"]);
        assert_eq!(v.tokenize("Red, PLAID dress!").unwrap().ids(), &[v.id("red").unwrap(), UNK_ID, v.id("dress").unwrap()]);
    }

    #[test]
    fn json_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let v = Vocabulary::build(["the man is wearing a cyan t-shirt"]);
        let p = tmp.path().join("vocab.json");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
