use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const STEP_SEP: &str = "S";
pub const CONCL: &str = "A";
pub const EOS: &str = ".";

/// Ordered token alphabet with the four special tokens resolved to ids.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    pad: TokenId,
    step_sep: TokenId,
    concl: TokenId,
    eos: TokenId,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 4 {
            return Err(Error::Config(format!(
                "vocabulary needs at least 4 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate token {tok:?}")));
            }
        }
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing special token {name:?}")))
        };
        Ok(Self {
            pad: special(PAD)?,
            step_sep: special(STEP_SEP)?,
            concl: special(CONCL)?,
            eos: special(EOS)?,
            tokens,
            index,
        })
    }

    /// Specials, digits `0`..`9`, `+`, `-`, `=` and recall keys `K0`..`K{num_keys-1}`.
    pub fn standard(num_keys: usize) -> Self {
        let mut tokens: Vec<String> = [PAD, STEP_SEP, CONCL, EOS].map(String::from).to_vec();
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend(["+", "-", "="].map(String::from));
        tokens.extend((0..num_keys).map(|k| format!("K{k}")));
        Self::new(tokens).expect("standard vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn step_sep(&self) -> TokenId {
        self.step_sep
    }

    pub fn concl(&self) -> TokenId {
        self.concl
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id of the single-character digit token `d`, if present.
    pub fn digit(&self, d: u32) -> Option<TokenId> {
        self.id(&d.to_string())
    }

    /// Encodes whitespace-separated symbols.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|sym| {
                self.id(sym)
                    .ok_or_else(|| Error::Config(format!("unknown token {sym:?}")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Renders a non-negative integer as canonical decimal digit tokens.
    pub fn render_number(&self, value: u32) -> Vec<TokenId> {
        value
            .to_string()
            .chars()
            .map(|c| self.digit(c.to_digit(10).unwrap()).expect("digit tokens present"))
            .collect()
    }

    pub fn is_valid(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.tokens).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout() {
        let v = Vocabulary::standard(4);
        assert_eq!(v.len(), 4 + 10 + 3 + 4);
        assert_eq!(v.token(v.pad()), Some(PAD));
        assert_eq!(v.token(v.concl()), Some("A"));
        assert_eq!(v.decode(&v.encode("3 + 4 - 2 =").unwrap()), "3 + 4 - 2 =");
        assert_eq!(v.decode(&v.render_number(18)), "1 8");
        assert_eq!(v.decode(&v.render_number(0)), "0");
    }

    #[test]
    fn rejects_missing_and_duplicate_specials() {
        assert!(Vocabulary::new(["<pad>", "S", "A", "x"]).is_err());
        assert!(Vocabulary::new(["<pad>", "S", "A", ".", "S"]).is_err());
        assert!(Vocabulary::new(["<pad>", "S", "A"]).is_err());
    }

    #[test]
    fn serializes_as_token_list() {
        let v = Vocabulary::new(["<pad>", "S", "A", ".", "x"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<pad>","S","A",".","x"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
