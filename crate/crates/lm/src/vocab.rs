use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{LmError, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Word-level token/id bijection. Ids 0..4 are always PAD, BOS, EOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    /// Builds a vocabulary from whitespace-tokenized texts. `reserved` tokens
    /// (segment delimiters, decision tokens) are assigned ids right after the
    /// specials, in the order given; the remaining tokens are sorted.
    pub fn build<'a, I, R>(texts: I, reserved: R) -> Self
    where
        I: IntoIterator<Item = &'a str>,
        R: IntoIterator<Item = &'a str>,
    {
        let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        for r in reserved {
            if !tokens.iter().any(|t| t == r) {
                tokens.push(r.to_string());
            }
        }
        let fixed: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
        let mut rest = BTreeSet::new();
        for text in texts {
            for tok in text.split_whitespace() {
                if !fixed.contains(tok) {
                    rest.insert(tok.to_string());
                }
            }
        }
        tokens.extend(rest);
        Self::from_tokens(tokens).expect("constructed vocabulary is a bijection")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = [PAD, BOS, EOS, UNK];
        if tokens.len() < specials.len() || tokens.iter().zip(specials).any(|(t, s)| t != s) {
            return Err(LmError::Vocab("vocabulary must start with <pad> <bos> <eos> <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(LmError::Vocab(format!("invalid token {t:?} at line {}", i + 1)));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(LmError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }

    /// Whitespace tokenization; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|t| self.id(t).unwrap_or(Self::UNK_ID)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        std::fs::write(path, out).map_err(|e| LmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LmError::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first_and_bijective() {
        let v = Vocab::build(["b a <x>", "a c"], ["<x>", "<y>"]);
        assert_eq!(v.id(PAD), Some(0));
        assert_eq!(v.id(EOS), Some(Vocab::EOS_ID));
        assert_eq!(v.id("<x>"), Some(4));
        assert_eq!(v.id("<y>"), Some(5));
        assert_eq!(v.len(), 9);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
        assert_eq!(v.encode("a zz"), vec![v.id("a").unwrap(), Vocab::UNK_ID]);
    }

    #[test]
    fn rejects_duplicates() {
        let toks = [PAD, BOS, EOS, UNK, "a", "a"].iter().map(|s| s.to_string()).collect();
        assert!(Vocab::from_tokens(toks).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocab::build(["hello world ."], []);
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
