//! Token vocabulary with fixed PAD and EOS conventions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary with PAD at id 0 and EOS at id 1, followed by
    /// the given tokens in order (duplicates and the reserved names are
    /// ignored).
    pub fn new<I, S>(tokens: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for t in [PAD, EOS] {
            v.index.insert(t.to_string(), v.tokens.len() as u32);
            v.tokens.push(t.to_string());
        }
        for t in tokens {
            let t = t.as_ref();
            if t.chars().any(char::is_whitespace) || t.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "token {t:?} contains whitespace or is empty"
                )));
            }
            if !v.index.contains_key(t) {
                v.index.insert(t.to_string(), v.tokens.len() as u32);
                v.tokens.push(t.to_string());
            }
        }
        Ok(v)
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn eos_id(&self) -> u32 {
        1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<u32>> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Strips PAD and truncates at the first EOS.
    pub fn strip(&self, ids: &[u32]) -> Vec<u32> {
        let mut out = Vec::new();
        for &id in ids {
            if id == self.eos_id() {
                break;
            }
            if id != self.pad_id() {
                out.push(id);
            }
        }
        out
    }

    /// Space-joined token list after the two reserved entries.
    pub fn to_config_string(&self) -> String {
        self.tokens[2..].join(" ")
    }

    pub fn from_config_string(s: &str) -> Result<Vocab> {
        Vocab::new(s.split_whitespace())
    }
}
