//! Discrete ground-truth machinery: parallel string rewriting over token
//! strings and deterministic finite-state transducers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Symbolic (pattern, replacement) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteRule {
    pub pattern: Vec<String>,
    pub replacement: Vec<String>,
}

impl DiscreteRule {
    pub fn new<S: Into<String>>(
        pattern: impl IntoIterator<Item = S>,
        replacement: impl IntoIterator<Item = S>,
    ) -> Result<DiscreteRule> {
        let rule = DiscreteRule {
            pattern: pattern.into_iter().map(Into::into).collect(),
            replacement: replacement.into_iter().map(Into::into).collect(),
        };
        if rule.pattern.is_empty() {
            return Err(Error::InvalidArgument("empty rule pattern".to_string()));
        }
        Ok(rule)
    }
}

/// One left-to-right pass: at each position the first (lowest-index) rule
/// whose pattern matches exactly fires and the pointer advances by the
/// pattern length; otherwise the token is copied. No cascading within a
/// pass. Returns the output plus the list of (position, rule) fires.
pub fn rewrite_pass_trace(tokens: &[String], rules: &[DiscreteRule]) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut fires = Vec::new();
    let mut pos = 0usize;
    'scan: while pos < tokens.len() {
        for (ri, rule) in rules.iter().enumerate() {
            let lp = rule.pattern.len();
            if pos + lp <= tokens.len() && tokens[pos..pos + lp] == rule.pattern[..] {
                out.extend(rule.replacement.iter().cloned());
                fires.push((pos, ri));
                pos += lp;
                continue 'scan;
            }
        }
        out.push(tokens[pos].clone());
        pos += 1;
    }
    (out, fires)
}

pub fn rewrite_pass(tokens: &[String], rules: &[DiscreteRule]) -> Vec<String> {
    rewrite_pass_trace(tokens, rules).0
}

/// Applies `rewrite_pass` repeatedly until a fixpoint or `max_passes`.
pub fn iterated_rewrite(
    tokens: &[String],
    rules: &[DiscreteRule],
    max_passes: usize,
) -> Result<Vec<String>> {
    if max_passes == 0 {
        return Err(Error::InvalidArgument(
            "max_passes must be at least 1".to_string(),
        ));
    }
    let mut cur = tokens.to_vec();
    for _ in 0..max_passes {
        let next = rewrite_pass(&cur, rules);
        if next == cur {
            break;
        }
        cur = next;
    }
    Ok(cur)
}

/// Deterministic finite-state transducer: at most one transition per
/// (state, symbol) pair, each emitting one output symbol.
#[derive(Debug, Clone)]
pub struct Fst {
    pub initial: String,
    pub states: BTreeSet<String>,
    pub alphabet: BTreeSet<String>,
    transitions: BTreeMap<(String, String), (String, String)>,
}

impl Fst {
    pub fn new(initial: &str) -> Fst {
        let mut states = BTreeSet::new();
        states.insert(initial.to_string());
        Fst {
            initial: initial.to_string(),
            states,
            alphabet: BTreeSet::new(),
            transitions: BTreeMap::new(),
        }
    }

    pub fn add_transition(&mut self, s: &str, a: &str, s2: &str, b: &str) -> Result<()> {
        let key = (s.to_string(), a.to_string());
        if self.transitions.contains_key(&key) {
            return Err(Error::InvalidArgument(format!(
                "nondeterministic FST: duplicate transition from ('{s}', '{a}')"
            )));
        }
        self.states.insert(s.to_string());
        self.states.insert(s2.to_string());
        self.alphabet.insert(a.to_string());
        self.transitions.insert(key, (s2.to_string(), b.to_string()));
        Ok(())
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&str, &str, &str, &str)> {
        self.transitions
            .iter()
            .map(|((s, a), (s2, b))| (s.as_str(), a.as_str(), s2.as_str(), b.as_str()))
    }

    pub fn output_symbols(&self) -> BTreeSet<String> {
        self.transitions.values().map(|(_, b)| b.clone()).collect()
    }

    /// Standard deterministic run emitting one output symbol per input.
    pub fn transduce(&self, tokens: &[String]) -> Result<Vec<String>> {
        let mut state = self.initial.clone();
        let mut out = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let (next, b) = self
                .transitions
                .get(&(state.clone(), tok.clone()))
                .ok_or_else(|| Error::MissingTransition {
                    state: state.clone(),
                    symbol: tok.clone(),
                })?;
            out.push(b.clone());
            state = next.clone();
        }
        Ok(out)
    }

    /// Text format: header `states k init s0`, then one `s a s' b` line
    /// per transition.
    pub fn parse(text: &str, path: &Path) -> Result<Fst> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty FST file".to_string(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "states" || h[2] != "init" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: hline,
                msg: format!("expected 'states k init s0', got '{header}'"),
            });
        }
        let declared: usize = h[1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: hline,
            msg: format!("bad state count '{}'", h[1]),
        })?;
        let mut fst = Fst::new(h[3]);
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: ln,
                    msg: format!("expected 's a s\\' b', got '{line}'"),
                });
            }
            fst.add_transition(parts[0], parts[1], parts[2], parts[3])
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: ln,
                    msg: e.to_string(),
                })?;
        }
        if fst.states.len() != declared {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: hline,
                msg: format!(
                    "header declares {declared} states, transitions mention {}",
                    fst.states.len()
                ),
            });
        }
        Ok(fst)
    }

    pub fn load(path: &Path) -> Result<Fst> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Fst::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("states {} init {}\n", self.states.len(), self.initial);
        for (s, a, s2, b) in self.transitions() {
            out.push_str(&format!("{s} {a} {s2} {b}\n"));
        }
        out
    }
}

/// Rule files: one rule per line, `pattern... -> replacement...`.
pub fn parse_rules(text: &str, path: &Path) -> Result<Vec<DiscreteRule>> {
    let mut rules = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg: format!("missing '->' in '{line}'"),
        })?;
        let pattern: Vec<String> = lhs.split_whitespace().map(String::from).collect();
        let replacement: Vec<String> = rhs.split_whitespace().map(String::from).collect();
        if pattern.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: "empty pattern".to_string(),
            });
        }
        rules.push(DiscreteRule { pattern, replacement });
    }
    Ok(rules)
}
