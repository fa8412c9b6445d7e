//! Compiles a deterministic FST into an exact rewrite-layer program.
//!
//! Encoding: the input string is prefixed with a state-marker token, so a
//! sequence mid-transduction looks like
//!   out(b1) .. out(bk)  st(s_k)  in(a_{k+1}) .. in(a_n)  eos
//! Every layer carries one rule per transition (s, a) -> (s', b) with
//! pattern [st(s), in(a)] and replacement [out(b), st(s')]: a fire emits
//! the output symbol and walks the marker one position right. With K
//! layers the model transduces any input of length <= K; once the input
//! is consumed the marker window is [st, eos], nothing matches, and the
//! remaining layers copy.
//!
//! Exactness relies on orthogonal one-hot embeddings: a full match scores
//! 2*sqrt(d), a single-slot match sqrt(d), and the copy bias sits between
//! them at 1.5*sqrt(d), so the argmax decode is the intended rule at the
//! marker and copy everywhere else.

use crate::discrete::Fst;
use crate::error::{Error, Result};
use crate::layer::{Model, ModelConfig};
use crate::vocab::Vocab;

/// Maps FST symbols into the compiled model's token space and back.
#[derive(Debug, Clone)]
pub struct FstCodec {
    pub vocab: Vocab,
    initial_marker: u32,
}

impl FstCodec {
    /// `[st(initial), in(a1), .., in(an)]` as token ids.
    pub fn encode(&self, symbols: &[String]) -> Result<Vec<u32>> {
        let mut ids = vec![self.initial_marker];
        for a in symbols {
            ids.push(self.vocab.id(&format!("in_{a}"))?);
        }
        Ok(ids)
    }

    /// Keeps only output-channel tokens, in order, dropping their prefix.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        self.vocab
            .strip(ids)
            .iter()
            .filter_map(|&id| {
                self.vocab
                    .token(id)
                    .strip_prefix("out_")
                    .map(String::from)
            })
            .collect()
    }
}

pub struct CompiledFst {
    pub model: Model,
    pub codec: FstCodec,
}

/// Vocabulary of a compiled machine: one token per state marker, input
/// symbol, and output symbol.
fn fst_vocab(fst: &Fst) -> Result<Vocab> {
    let mut tokens = Vec::new();
    for s in &fst.states {
        tokens.push(format!("st_{s}"));
    }
    for a in &fst.alphabet {
        tokens.push(format!("in_{a}"));
    }
    for b in fst.output_symbols() {
        tokens.push(format!("out_{b}"));
    }
    Vocab::new(tokens)
}

/// Minimum embedding width: one orthogonal channel per vocabulary entry.
pub fn required_width(fst: &Fst) -> Result<usize> {
    Ok(fst_vocab(fst)?.len())
}

/// The layer-norm image of a one-hot vector in `d` dimensions, matching
/// what layer normalization (gain 1, bias 0) produces for embedded tokens.
fn ln_one_hot(idx: usize, d: usize, eps: f64) -> Vec<f64> {
    let mean = 1.0 / d as f64;
    let var = (d as f64 - 1.0) / (d as f64 * d as f64);
    let inv_std = 1.0 / (var + eps).sqrt();
    (0..d)
        .map(|j| ((if j == idx { 1.0 } else { 0.0 }) - mean) * inv_std)
        .collect()
}

/// Builds a model whose forward pass (noise off) equals `fst.transduce`
/// on every input of length at most `max_input_len`.
pub fn compile_fst(fst: &Fst, d: usize, max_input_len: usize) -> Result<CompiledFst> {
    let vocab = fst_vocab(fst)?;
    if d < vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "embedding width {d} too small: {} orthogonal channels required",
            vocab.len()
        )));
    }
    if max_input_len == 0 {
        return Err(Error::InvalidArgument(
            "max_input_len must be at least 1".to_string(),
        ));
    }
    let transitions: Vec<(String, String, String, String)> = fst
        .transitions()
        .map(|(s, a, s2, b)| {
            (
                s.to_string(),
                a.to_string(),
                s2.to_string(),
                b.to_string(),
            )
        })
        .collect();
    if transitions.is_empty() {
        return Err(Error::InvalidArgument(
            "FST has no transitions".to_string(),
        ));
    }

    let config = ModelConfig {
        d,
        rules: transitions.len(),
        layers: vec![(2, 2); max_input_len],
        max_output_len: max_input_len + 2,
        residual_enabled: false,
        dropout: 0.0,
        temperature: 0.1,
        sinkhorn_iters: 1,
            copy_bias_init: 1.0,
        vocab: vocab.clone(),
    };
    let model = Model::new(config, 0)?;

    // One orthogonal channel per token.
    let v = vocab.len();
    let mut emb = vec![0.0; v * d];
    for t in 0..v {
        emb[t * d + t] = 1.0;
    }
    model.embedding.set_data(emb);

    let copy_bias = 1.5 * (d as f64).sqrt();
    for params in &model.layers {
        let mut pat = vec![0.0; transitions.len() * 2 * d];
        let mut rep = vec![0.0; transitions.len() * 2 * d];
        for (r, (s, a, s2, b)) in transitions.iter().enumerate() {
            let st = vocab.id(&format!("st_{s}"))? as usize;
            let sym = vocab.id(&format!("in_{a}"))? as usize;
            let st2 = vocab.id(&format!("st_{s2}"))? as usize;
            let out = vocab.id(&format!("out_{b}"))? as usize;
            pat[(r * 2) * d..(r * 2 + 1) * d]
                .copy_from_slice(&ln_one_hot(st, d, crate::layer::LN_EPS));
            pat[(r * 2 + 1) * d..(r * 2 + 2) * d]
                .copy_from_slice(&ln_one_hot(sym, d, crate::layer::LN_EPS));
            rep[(r * 2) * d + out] = 1.0;
            rep[(r * 2 + 1) * d + st2] = 1.0;
        }
        params.patterns.set_data(pat);
        params.replacements.set_data(rep);
        params.copy_bias.set_elem(0, copy_bias);
    }

    let initial_marker = vocab.id(&format!("st_{}", fst.initial))?;
    Ok(CompiledFst {
        model,
        codec: FstCodec {
            vocab,
            initial_marker,
        },
    })
}

/// Runs one input through the compiled model.
pub fn simulate(compiled: &CompiledFst, symbols: &[String]) -> Result<Vec<String>> {
    let ids = compiled.codec.encode(symbols)?;
    let out = compiled.model.predict(&ids)?;
    Ok(compiled.codec.decode(&out))
}

#[derive(Debug)]
pub struct VerifyReport {
    pub total: usize,
    /// (input, expected, got) for every disagreement.
    pub mismatches: Vec<(Vec<String>, Vec<String>, Vec<String>)>,
}

impl VerifyReport {
    pub fn all_match(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares the compiled model against `fst.transduce` on every input of
/// length 0..=max_len over the FST's alphabet.
pub fn verify_exhaustive(fst: &Fst, max_len: usize) -> Result<VerifyReport> {
    let d = required_width(fst)?;
    let compiled = compile_fst(fst, d, max_len.max(1))?;
    let alphabet: Vec<String> = fst.alphabet.iter().cloned().collect();
    let mut report = VerifyReport {
        total: 0,
        mismatches: Vec::new(),
    };
    let mut inputs: Vec<Vec<String>> = vec![Vec::new()];
    for len in 0..=max_len {
        if len > 0 {
            let mut next = Vec::with_capacity(inputs.len() * alphabet.len());
            for prefix in &inputs {
                for a in &alphabet {
                    let mut w = prefix.clone();
                    w.push(a.clone());
                    next.push(w);
                }
            }
            inputs = next;
        }
        for input in &inputs {
            let expected = fst.transduce(input)?;
            let got = simulate(&compiled, input)?;
            report.total += 1;
            if got != expected {
                report
                    .mismatches
                    .push((input.clone(), expected, got));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::inspect_rules;

    fn parity_fst() -> Fst {
        let mut f = Fst::new("even");
        f.add_transition("even", "0", "even", "0").unwrap();
        f.add_transition("even", "1", "odd", "1").unwrap();
        f.add_transition("odd", "0", "odd", "1").unwrap();
        f.add_transition("odd", "1", "even", "0").unwrap();
        f
    }

    fn syms(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_fst_rules_decode_to_their_symbol() {
        let mut f = Fst::new("q");
        for a in ["a", "b", "c"] {
            f.add_transition("q", a, "q", a).unwrap();
        }
        let d = required_width(&f).unwrap();
        let compiled = compile_fst(&f, d, 4).unwrap();
        let text = inspect_rules(&compiled.model, &[]).unwrap();
        // each rule reads st_q + in_x and writes out_x + st_q
        for a in ["a", "b", "c"] {
            assert!(
                text.contains(&format!("in_{a}")) && text.contains(&format!("out_{a}")),
                "missing {a} mapping in:\n{text}"
            );
        }
    }

    #[test]
    fn parity_simulation_matches_hand_values() {
        let f = parity_fst();
        let compiled = compile_fst(&f, required_width(&f).unwrap(), 8).unwrap();
        assert_eq!(simulate(&compiled, &syms("0 1 1")).unwrap(), syms("0 1 0"));
        assert_eq!(simulate(&compiled, &[]).unwrap(), Vec::<String>::new());
        assert_eq!(
            simulate(&compiled, &syms("1 1 1 1 1 1 1 1")).unwrap(),
            syms("1 0 1 0 1 0 1 0")
        );
    }

    #[test]
    fn parity_exhaustive_to_length_six() {
        let report = verify_exhaustive(&parity_fst(), 6).unwrap();
        assert_eq!(report.total, 127); // 2^0 + .. + 2^6
        assert!(
            report.all_match(),
            "first mismatch: {:?}",
            report.mismatches.first()
        );
    }

    #[test]
    fn three_state_machine_exhaustive_to_length_five() {
        // counts input symbols mod 3, emitting the current count
        let mut f = Fst::new("c0");
        for (i, s) in ["c0", "c1", "c2"].iter().enumerate() {
            let next = ["c0", "c1", "c2"][(i + 1) % 3];
            f.add_transition(s, "x", next, &format!("{}", (i + 1) % 3))
                .unwrap();
            f.add_transition(s, "y", s, &format!("{i}")).unwrap();
        }
        let report = verify_exhaustive(&f, 5).unwrap();
        assert!(
            report.all_match(),
            "first mismatch: {:?}",
            report.mismatches.first()
        );
    }

    #[test]
    fn too_small_width_is_an_error() {
        let f = parity_fst();
        let need = required_width(&f).unwrap();
        assert!(compile_fst(&f, need - 1, 4).is_err());
        assert!(compile_fst(&f, need, 4).is_ok());
    }

    #[test]
    fn out_of_alphabet_symbol_fails_to_encode() {
        let f = parity_fst();
        let compiled = compile_fst(&f, required_width(&f).unwrap(), 4).unwrap();
        assert!(matches!(
            compiled.codec.encode(&syms("0 2")),
            Err(Error::UnknownToken(_))
        ));
    }
}
