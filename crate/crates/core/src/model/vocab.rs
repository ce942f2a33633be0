//! Token vocabularies. Every vocabulary starts with PAD=0, BOS=1, EOS=2;
//! content tokens follow in sorted order so builds are reproducible.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from content tokens (deduplicated, sorted) behind
    /// the three special tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .collect();
        let mut all = vec![
            PAD_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
        ];
        all.extend(unique);
        Self::from_ordered(all)
    }

    /// Rebuilds from an already-ordered token list (checkpoint loading,
    /// vocabulary extension). The first three entries must be the specials.
    pub fn from_ordered(tokens: Vec<String>) -> Self {
        assert!(
            tokens.len() >= 3
                && tokens[0] == PAD_TOKEN
                && tokens[1] == BOS_TOKEN
                && tokens[2] == EOS_TOKEN,
            "vocabulary must start with the special tokens"
        );
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Appends new content tokens (sorted, deduplicated) and reports how many
    /// were actually added. Existing ids are untouched.
    pub fn extend<I, S>(&mut self, tokens: I) -> usize
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let fresh: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !self.contains(t))
            .collect();
        let added = fresh.len();
        for t in fresh {
            self.index.insert(t.clone(), self.tokens.len() as u32);
            self.tokens.push(t);
        }
        added
    }

    pub fn encode(&self, tokens: &[String]) -> Option<Vec<u32>> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter_map(|&id| self.token(id).map(|s| s.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first_and_content_is_sorted() {
        let v = Vocab::from_tokens(["walk", "and", "run", "and"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id_of("<pad>"), Some(PAD));
        assert_eq!(v.id_of("<bos>"), Some(BOS));
        assert_eq!(v.id_of("<eos>"), Some(EOS));
        assert_eq!(v.token(3), Some("and"));
        assert_eq!(v.token(4), Some("run"));
        assert_eq!(v.token(5), Some("walk"));
    }

    #[test]
    fn extension_preserves_existing_ids() {
        let mut v = Vocab::from_tokens(["b", "d"]);
        let before_d = v.id_of("d").unwrap();
        let added = v.extend(["a", "d", "c"]);
        assert_eq!(added, 2);
        assert_eq!(v.id_of("d"), Some(before_d));
        assert!(v.id_of("a").unwrap() > before_d);
    }
}
