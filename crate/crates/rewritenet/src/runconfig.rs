//! Flat key-value config documents: `key = value` lines, `#` comments.
//! Unknown keys are rejected by the typed loaders built on top.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    pairs: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> KvDoc {
        KvDoc::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn parse(text: &str, path: &Path) -> Result<KvDoc> {
        let mut doc = KvDoc::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            doc.pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<KvDoc> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvDoc::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("missing config key '{key}'")))
    }

    pub fn parse_field<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse::<T>().map_err(|_| {
            Error::InvalidArgument(format!("config key '{key}': cannot parse '{raw}'"))
        })
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::InvalidArgument(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    /// Errors on any key outside the allowed set.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.pairs {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown config key '{k}'")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let text = "# comment\nsteps = 100\nname = run one\n";
        let doc = KvDoc::parse(text, Path::new("mem")).unwrap();
        assert_eq!(doc.get("steps"), Some("100"));
        assert_eq!(doc.get("name"), Some("run one"));
        assert_eq!(doc.parse_field::<usize>("steps").unwrap(), 100);
        let doc2 = KvDoc::parse(&doc.to_text(), Path::new("mem")).unwrap();
        assert_eq!(doc, doc2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let doc = KvDoc::parse("a = 1\nb = 2\n", Path::new("mem")).unwrap();
        assert!(doc.reject_unknown(&["a"]).is_err());
        assert!(doc.reject_unknown(&["a", "b"]).is_ok());
    }

    #[test]
    fn malformed_line_reports_number() {
        match KvDoc::parse("ok = 1\nbroken line\n", Path::new("mem")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
