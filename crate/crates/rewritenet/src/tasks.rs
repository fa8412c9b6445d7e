//! Benchmark generators, exact-match scoring, and the on-disk dataset
//! format (one `src TAB tgt` line per record, space-separated tokens).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrete::{rewrite_pass, DiscreteRule};
use crate::error::{Error, Result};
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// One named split of a generated dataset. The target-length bounds are
/// the split constraint; generalization splits keep train and test bounds
/// disjoint.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub name: String,
    pub min_tgt_len: usize,
    pub max_tgt_len: usize,
    pub rng_seed: u64,
    pub size: usize,
}

impl SplitSpec {
    pub fn new(name: &str, min_tgt_len: usize, max_tgt_len: usize, rng_seed: u64, size: usize) -> SplitSpec {
        SplitSpec {
            name: name.to_string(),
            min_tgt_len,
            max_tgt_len,
            rng_seed,
            size,
        }
    }
}

pub const DEFAULT_TRAIN_SIZE: usize = 10_000;
pub const DEFAULT_VALID_SIZE: usize = 1_000;
pub const DEFAULT_TEST_SIZE: usize = 1_000;

// ---------------------------------------------------------------- reversal

/// Sequences of distinct integer tokens, target reversed. Tokens are the
/// decimal names of 0..vocab_size.
pub fn gen_reversal(
    min_len: usize,
    max_len: usize,
    vocab_size: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::InvalidArgument(format!(
            "bad length range [{min_len}, {max_len}]"
        )));
    }
    if vocab_size < max_len {
        return Err(Error::InvalidArgument(format!(
            "vocab of {vocab_size} cannot fill {max_len} distinct slots"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_samples);
    let mut pool: Vec<usize> = (0..vocab_size).collect();
    for _ in 0..n_samples {
        let len = rng.random_range(min_len..=max_len);
        // partial Fisher-Yates: the first `len` entries are a uniform
        // draw of distinct values
        for i in 0..len {
            let j = rng.random_range(i..vocab_size);
            pool.swap(i, j);
        }
        let src: Vec<String> = pool[..len].iter().map(|v| v.to_string()).collect();
        let tgt: Vec<String> = src.iter().rev().cloned().collect();
        records.push(DatasetRecord { src, tgt });
    }
    Ok(records)
}

pub fn reversal_vocab(vocab_size: usize) -> Result<Vocab> {
    Vocab::new((0..vocab_size).map(|v| v.to_string()))
}

// -------------------------------------------------------------------- scan

const ACTIONS: [(&str, &str); 4] = [
    ("walk", "WALK"),
    ("run", "RUN"),
    ("jump", "JUMP"),
    ("look", "LOOK"),
];
const DIRECTIONS: [(&str, &str); 2] = [("left", "LEFT"), ("right", "RIGHT")];

fn action_token(word: &str) -> Option<&'static str> {
    ACTIONS.iter().find(|(w, _)| *w == word).map(|(_, t)| *t)
}

fn direction_token(word: &str) -> Option<&'static str> {
    DIRECTIONS.iter().find(|(w, _)| *w == word).map(|(_, t)| *t)
}

/// Interprets one clause: `action [opposite|around] [direction] [twice|thrice]`.
fn interpret_clause(words: &[&str]) -> Result<Vec<String>> {
    let bad = || Error::InvalidArgument(format!("unparseable clause '{}'", words.join(" ")));
    let (words, repeat) = match words.last() {
        Some(&"twice") => (&words[..words.len() - 1], 2),
        Some(&"thrice") => (&words[..words.len() - 1], 3),
        _ => (words, 1),
    };
    let (&head, rest) = words.split_first().ok_or_else(bad)?;
    let action = action_token(head).ok_or_else(bad)?;
    let unit: Vec<String> = match rest {
        [] => vec![action.to_string()],
        [dir] => {
            let d = direction_token(dir).ok_or_else(bad)?;
            vec![action.to_string(), d.to_string()]
        }
        ["opposite", dir] => {
            let d = direction_token(dir).ok_or_else(bad)?;
            vec![action.to_string(), d.to_string(), d.to_string()]
        }
        ["around", dir] => {
            let d = direction_token(dir).ok_or_else(bad)?;
            let mut out = Vec::with_capacity(8);
            for _ in 0..4 {
                out.push(action.to_string());
                out.push(d.to_string());
            }
            out
        }
        _ => return Err(bad()),
    };
    let mut out = Vec::with_capacity(unit.len() * repeat);
    for _ in 0..repeat {
        out.extend(unit.iter().cloned());
    }
    Ok(out)
}

/// Compositional interpreter for the command grammar: one or two clauses
/// joined by "and" (in order) or "after" (second clause executed first).
pub fn interpret_command(command: &[String]) -> Result<Vec<String>> {
    let words: Vec<&str> = command.iter().map(String::as_str).collect();
    if let Some(pos) = words.iter().position(|&w| w == "and") {
        let mut out = interpret_clause(&words[..pos])?;
        out.extend(interpret_clause(&words[pos + 1..])?);
        Ok(out)
    } else if let Some(pos) = words.iter().position(|&w| w == "after") {
        let mut out = interpret_clause(&words[pos + 1..])?;
        out.extend(interpret_clause(&words[..pos])?);
        Ok(out)
    } else {
        interpret_clause(&words)
    }
}

fn all_clauses() -> Vec<Vec<String>> {
    let mut clauses = Vec::new();
    for (act, _) in ACTIONS {
        let mut bases: Vec<Vec<&str>> = vec![vec![act]];
        for (dir, _) in DIRECTIONS {
            bases.push(vec![act, dir]);
            bases.push(vec![act, "opposite", dir]);
            bases.push(vec![act, "around", dir]);
        }
        for base in bases {
            for suffix in [None, Some("twice"), Some("thrice")] {
                let mut c: Vec<String> = base.iter().map(|w| w.to_string()).collect();
                if let Some(s) = suffix {
                    c.push(s.to_string());
                }
                clauses.push(c);
            }
        }
    }
    clauses
}

/// Every command in the grammar: single clauses plus all ordered pairs
/// joined by "and" or "after".
pub fn all_commands() -> Vec<Vec<String>> {
    let clauses = all_clauses();
    let mut commands = clauses.clone();
    for joiner in ["and", "after"] {
        for a in &clauses {
            for b in &clauses {
                let mut c = a.clone();
                c.push(joiner.to_string());
                c.extend(b.iter().cloned());
                commands.push(c);
            }
        }
    }
    commands
}

/// Samples commands whose action-sequence length lies inside the split's
/// bounds, uniformly with replacement from the enumerated grammar.
pub fn gen_scan(split: &SplitSpec) -> Result<Vec<DatasetRecord>> {
    let mut pool = Vec::new();
    for src in all_commands() {
        let tgt = interpret_command(&src)?;
        if tgt.len() >= split.min_tgt_len && tgt.len() <= split.max_tgt_len {
            pool.push(DatasetRecord { src, tgt });
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no commands with target length in [{}, {}]",
            split.min_tgt_len, split.max_tgt_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split.rng_seed);
    pool.shuffle(&mut rng);
    let records = (0..split.size)
        .map(|i| {
            if i < pool.len() {
                pool[i].clone()
            } else {
                pool[rng.random_range(0..pool.len())].clone()
            }
        })
        .collect();
    Ok(records)
}

/// The generalization split: train and valid see targets up to
/// `train_max_tgt_len` actions, test sees strictly longer ones.
pub fn scan_length_splits(train_max_tgt_len: usize, seed: u64) -> [SplitSpec; 3] {
    [
        SplitSpec::new("train", 0, train_max_tgt_len, seed, DEFAULT_TRAIN_SIZE),
        SplitSpec::new("valid", 0, train_max_tgt_len, seed + 1, DEFAULT_VALID_SIZE),
        SplitSpec::new(
            "test",
            train_max_tgt_len + 1,
            usize::MAX,
            seed + 2,
            DEFAULT_TEST_SIZE,
        ),
    ]
}

pub fn scan_vocab() -> Result<Vocab> {
    let mut tokens: Vec<String> = Vec::new();
    for (w, t) in ACTIONS {
        tokens.push(w.to_string());
        tokens.push(t.to_string());
    }
    for (w, t) in DIRECTIONS {
        tokens.push(w.to_string());
        tokens.push(t.to_string());
    }
    for w in ["opposite", "around", "twice", "thrice", "and", "after"] {
        tokens.push(w.to_string());
    }
    Vocab::new(tokens)
}

// ------------------------------------------------------------- compression

pub fn abc_rule() -> DiscreteRule {
    DiscreteRule::new(["A", "B", "C"], []).unwrap()
}

/// Uniform random {A,B,C} strings; target is the single left-to-right pass
/// removing non-overlapping "ABC" occurrences. A sample is cascade-free
/// when the removal exposes no new occurrence; by default only those are
/// kept, `include_cascades` admits the rest (still single-pass targets).
pub fn gen_compression(
    min_len: usize,
    max_len: usize,
    n_samples: usize,
    seed: u64,
    include_cascades: bool,
) -> Result<Vec<DatasetRecord>> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::InvalidArgument(format!(
            "bad length range [{min_len}, {max_len}]"
        )));
    }
    let rule = abc_rule();
    let letters = ["A", "B", "C"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_samples);
    while records.len() < n_samples {
        let len = rng.random_range(min_len..=max_len);
        let src: Vec<String> = (0..len)
            .map(|_| letters[rng.random_range(0..3)].to_string())
            .collect();
        let tgt = rewrite_pass(&src, std::slice::from_ref(&rule));
        let cascade_free = rewrite_pass(&tgt, std::slice::from_ref(&rule)) == tgt;
        if cascade_free || include_cascades {
            records.push(DatasetRecord { src, tgt });
        }
    }
    Ok(records)
}

pub fn compression_vocab() -> Result<Vocab> {
    Vocab::new(["A", "B", "C"])
}

// ------------------------------------------------------------ exact match

fn strip(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for t in tokens {
        if t == crate::vocab::EOS {
            break;
        }
        if t != crate::vocab::PAD {
            out.push(t.clone());
        }
    }
    out
}

/// True iff the sequences agree after PAD stripping and EOS truncation.
pub fn exact_match(pred: &[String], tgt: &[String]) -> bool {
    strip(pred) == strip(tgt)
}

pub fn corpus_em(preds: &[Vec<String>], tgts: &[Vec<String>]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .iter()
        .zip(tgts)
        .filter(|(p, t)| exact_match(p, t))
        .count();
    hits as f64 / preds.len() as f64
}

// -------------------------------------------------------------- dataset io

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.src.join(" "));
        out.push('\t');
        out.push_str(&r.tgt.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg: "missing TAB separator".to_string(),
        })?;
        records.push(DatasetRecord {
            src: src.split_whitespace().map(String::from).collect(),
            tgt: tgt.split_whitespace().map(String::from).collect(),
        });
    }
    Ok(records)
}
