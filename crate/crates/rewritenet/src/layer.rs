//! Rewrite layers and the stacked sequence-to-sequence model.
//!
//! A layer normalizes its input, scores every length-Lp window against a
//! bank of learned patterns, resolves conflicts into a hard non-overlapping
//! assignment, and emits either the normalized row (copy) or the rule's
//! replacement rows (fire). Fires change the sequence length by Lq − Lp.

use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assign::{self, Applied};
use crate::error::{Error, Result};
use crate::optim::ParameterRegistry;
use crate::rnd;
use crate::runconfig::KvDoc;
use crate::tensor::{self, make_node, Tensor};
use crate::vocab::Vocab;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Rules per layer.
    pub rules: usize,
    /// Per-layer (pattern length, replacement length).
    pub layers: Vec<(usize, usize)>,
    pub max_output_len: usize,
    pub residual_enabled: bool,
    /// Element dropout probability on rewritten rows during training.
    pub dropout: f64,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    /// Starting score of the copy column. Exploration noise is O(ln R), so
    /// larger rule banks need a larger bias to keep early training from
    /// rewriting everything at random.
    pub copy_bias_init: f64,
    pub vocab: Vocab,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be positive".to_string()));
        }
        if self.rules == 0 {
            return Err(Error::InvalidArgument("rules must be positive".to_string()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one layer is required".to_string(),
            ));
        }
        for &(lp, _) in &self.layers {
            if lp == 0 {
                return Err(Error::InvalidArgument(
                    "pattern length must be at least 1".to_string(),
                ));
            }
        }
        if self.max_output_len == 0 {
            return Err(Error::InvalidArgument(
                "max_output_len must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::InvalidArgument(
                "sinkhorn_iters must be at least 1".to_string(),
            ));
        }
        if !self.copy_bias_init.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "copy_bias_init must be finite, got {}",
                self.copy_bias_init
            )));
        }
        Ok(())
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("d", self.d);
        doc.push("rules", self.rules);
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|(lp, lq)| format!("{lp}:{lq}"))
            .collect();
        doc.push("layers", layers.join(","));
        doc.push("max_output_len", self.max_output_len);
        doc.push("residual", self.residual_enabled);
        doc.push("dropout", self.dropout);
        doc.push("tau", self.temperature);
        doc.push("sinkhorn_iters", self.sinkhorn_iters);
        doc.push("copy_bias_init", self.copy_bias_init);
        doc.push("vocab", self.vocab.to_config_string());
        doc
    }

    pub fn from_doc(doc: &KvDoc) -> Result<ModelConfig> {
        doc.reject_unknown(&[
            "d",
            "rules",
            "layers",
            "max_output_len",
            "residual",
            "dropout",
            "tau",
            "sinkhorn_iters",
            "copy_bias_init",
            "vocab",
        ])?;
        let mut layers = Vec::new();
        for part in doc.require("layers")?.split(',') {
            let (lp, lq) = part.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("layer spec '{part}' is not 'lp:lq'"))
            })?;
            let lp = lp.parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("bad pattern length in '{part}'"))
            })?;
            let lq = lq.parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("bad replacement length in '{part}'"))
            })?;
            layers.push((lp, lq));
        }
        let cfg = ModelConfig {
            d: doc.parse_field("d")?,
            rules: doc.parse_field("rules")?,
            layers,
            max_output_len: doc.parse_field("max_output_len")?,
            residual_enabled: doc.parse_field("residual")?,
            dropout: doc.parse_field("dropout")?,
            temperature: doc.parse_field("tau")?,
            sinkhorn_iters: doc.parse_field("sinkhorn_iters")?,
            copy_bias_init: doc.parse_or("copy_bias_init", 1.0)?,
            vocab: Vocab::from_config_string(doc.require("vocab")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learnable state of one layer.
pub struct LayerParams {
    /// R × Lp × d.
    pub patterns: Tensor,
    /// R × Lq × d.
    pub replacements: Tensor,
    /// Scalar score of the copy column.
    pub copy_bias: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

/// The discrete choices one forward pass made in one layer, recorded so a
/// later pass can rebuild the identical graph (e.g. finite-difference
/// checks against the tape).
#[derive(Debug, Clone)]
pub struct LayerStructure {
    /// Gumbel noise added to the scores; None when noise was off.
    pub noise: Option<Vec<f64>>,
    /// Hard 0/1 assignment matrix, rows × (R+1) row-major.
    pub hard: Vec<f64>,
    pub applied: Applied,
    /// Inverted-dropout multipliers per output element; None when off.
    pub dropout_mask: Option<Vec<f64>>,
    /// Input was shorter than Lp, so the layer passed it through.
    pub pure_copy: bool,
}

/// How a forward pass samples its discrete structure.
pub enum Mode<'a> {
    /// Gumbel noise and dropout active, structure sampled fresh.
    Train(&'a mut dyn RngCore),
    /// Deterministic: no noise, no dropout.
    Eval,
    /// Replays recorded structures instead of decoding new ones.
    Frozen(&'a [LayerStructure]),
}

pub struct ForwardTrace {
    /// Final hidden rows, m × d.
    pub hidden: Tensor,
    /// Tied-embedding decode, m × V.
    pub logits: Tensor,
    pub structures: Vec<LayerStructure>,
}

pub struct Model {
    pub config: ModelConfig,
    pub registry: ParameterRegistry,
    /// V × d token embeddings, also used to decode.
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
}

/// Window scores of the normalized input against the pattern bank plus the
/// copy column: (n−Lp+1) × (R+1).
pub fn match_scores(xn: &Tensor, patterns: &Tensor, copy_bias: &Tensor) -> Result<Tensor> {
    let d = xn.shape()[1];
    let s = tensor::conv_match(xn, patterns, 1.0 / (d as f64).sqrt())?;
    tensor::append_col(&s, copy_bias)
}

/// Applies a decoded assignment: copy rows pass the normalized input row
/// through, fire rows emit the rule's replacement rows scaled by the
/// straight-through gate. Returns the new rows and the (output row, input
/// position) pairs of the copies, which is where the residual attaches.
///
/// Forward, the gate is exactly 1 on fires, so fire rows equal the
/// replacement. The backward pass treats each fire row as
/// g·q + (1−g)·mean(replaced window), which gives the gate a gradient
/// comparing the replacement against what it displaced.
pub fn rewrite_apply(
    xn: &Tensor,
    replacements: &Tensor,
    gate: &Tensor,
    applied: &Applied,
    lp: usize,
) -> Result<(Tensor, Vec<(usize, usize)>)> {
    let (n, d) = {
        let s = xn.shape();
        (s[0], s[1])
    };
    let rs = replacements.shape();
    let (_r, lq) = (rs[0], rs[1]);
    let gs = gate.shape();
    let (rows, cols) = (gs[0], gs[1]);

    // Walk the applied list, skipping the covered entries that follow a fire.
    let mut copies: Vec<(usize, usize)> = Vec::new(); // (out_row, in_pos)
    let mut fires: Vec<(usize, usize, usize)> = Vec::new(); // (out_start, pos, rule)
    let mut m = 0usize;
    let mut i = 0usize;
    while i < applied.len() {
        let (pos, rule) = applied[i];
        match rule {
            None => {
                copies.push((m, pos));
                m += 1;
                i += 1;
            }
            Some(r) => {
                fires.push((m, pos, r));
                m += lq;
                // hard_decode emitted the covered positions right after
                i += (pos + lp).min(n) - pos;
            }
        }
    }

    let xv = xn.data();
    let qv = replacements.data();
    let gv = gate.data();
    let mut out = vec![0.0; m * d];
    let mut gate_vals = Vec::with_capacity(fires.len());
    let mut window_means = Vec::with_capacity(fires.len());
    // For zero-length replacements the fire emits no rows, which would cut
    // the gate out of the graph entirely; instead the suppressed window
    // bleeds (1−g)·mean into the adjacent output row. At g = 1 (hard
    // forward) the bleed is exactly zero, so discrete semantics hold.
    let bleed_rows: Vec<Option<usize>> = fires
        .iter()
        .map(|&(start, _, _)| {
            if lq > 0 || m == 0 {
                None
            } else {
                Some(start.min(m - 1))
            }
        })
        .collect();
    // Copy rows are scaled by the copy-column gate (1 in the hard forward),
    // so the copy-versus-rewrite decision itself receives a gradient.
    // Tail positions past the last window have no score row; their copies
    // stay ungated.
    let mut copy_gates = Vec::with_capacity(copies.len());
    for &(out_row, pos) in &copies {
        let gc = if pos < rows {
            gv[pos * cols + (cols - 1)]
        } else {
            1.0
        };
        copy_gates.push(gc);
        for j in 0..d {
            out[out_row * d + j] = gc * xv[pos * d + j];
        }
    }
    for (f, &(start, pos, r)) in fires.iter().enumerate() {
        let g = gv[pos * cols + r];
        gate_vals.push(g);
        let span = (pos + lp).min(n) - pos;
        let mut mean = vec![0.0; d];
        for k in 0..span {
            for j in 0..d {
                mean[j] += xv[(pos + k) * d + j] / span as f64;
            }
        }
        for k in 0..lq {
            for j in 0..d {
                out[(start + k) * d + j] =
                    g * qv[(r * lq + k) * d + j] + (1.0 - g) * mean[j];
            }
        }
        if let Some(row) = bleed_rows[f] {
            for j in 0..d {
                out[row * d + j] += (1.0 - g) * mean[j];
            }
        }
        window_means.push(mean);
    }
    drop(xv);
    drop(qv);
    drop(gv);

    let qc = replacements.clone();
    let xc = xn.clone();
    let copies_b = copies.clone();
    let fires_b = fires.clone();
    let bleed_rows_b = bleed_rows.clone();
    let out_t = make_node(
        "rewrite_apply",
        vec![m, d],
        out,
        vec![xn.clone(), replacements.clone(), gate.clone()],
        move |g_up| {
            let qv = qc.data();
            let xv = xc.data();
            let mut dx = vec![0.0; n * d];
            let mut dq = vec![0.0; qv.len()];
            let mut dg = vec![0.0; rows * cols];
            for (c, &(out_row, pos)) in copies_b.iter().enumerate() {
                let gc = copy_gates[c];
                let mut dgate = 0.0;
                for j in 0..d {
                    let up = g_up[out_row * d + j];
                    dx[pos * d + j] += gc * up;
                    dgate += up * xv[pos * d + j];
                }
                if pos < rows {
                    dg[pos * cols + (cols - 1)] += dgate;
                }
            }
            for (f, &(start, pos, r)) in fires_b.iter().enumerate() {
                let g = gate_vals[f];
                let mean = &window_means[f];
                let span = (pos + lp).min(n) - pos;
                let mut dgate = 0.0;
                for k in 0..lq {
                    for j in 0..d {
                        let up = g_up[(start + k) * d + j];
                        dq[(r * lq + k) * d + j] += g * up;
                        dgate += up * (qv[(r * lq + k) * d + j] - mean[j]);
                        let w = (1.0 - g) * up / span as f64;
                        for t in 0..span {
                            dx[(pos + t) * d + j] += w;
                        }
                    }
                }
                if let Some(row) = bleed_rows_b[f] {
                    for j in 0..d {
                        let up = g_up[row * d + j];
                        dgate -= up * mean[j];
                        let w = (1.0 - g) * up / span as f64;
                        for t in 0..span {
                            dx[(pos + t) * d + j] += w;
                        }
                    }
                }
                dg[pos * cols + r] += dgate;
            }
            vec![dx, dq, dg]
        },
    )?;
    Ok((out_t, copies))
}

/// Adds the pre-norm input row onto each copy output row.
pub fn residual_add(y: &Tensor, x: &Tensor, copy_pairs: &[(usize, usize)]) -> Result<Tensor> {
    let (m, d) = {
        let s = y.shape();
        (s[0], s[1])
    };
    let n = x.shape()[0];
    let mut out = y.to_vec();
    let xv = x.data();
    for &(orow, ipos) in copy_pairs {
        for j in 0..d {
            out[orow * d + j] += xv[ipos * d + j];
        }
    }
    drop(xv);
    let pairs = copy_pairs.to_vec();
    make_node(
        "residual_add",
        vec![m, d],
        out,
        vec![y.clone(), x.clone()],
        move |g| {
            let mut dx = vec![0.0; n * d];
            for &(orow, ipos) in &pairs {
                for j in 0..d {
                    dx[ipos * d + j] += g[orow * d + j];
                }
            }
            vec![g.to_vec(), dx]
        },
    )
}

fn layer_forward(
    x: &Tensor,
    params: &LayerParams,
    lp: usize,
    cfg: &ModelConfig,
    mode: &mut Mode,
    frozen: Option<&LayerStructure>,
) -> Result<(Tensor, LayerStructure)> {
    let n = x.shape()[0];
    if let Some(fs) = frozen {
        if fs.pure_copy {
            return Ok((x.clone(), fs.clone()));
        }
    } else if n < lp {
        let structure = LayerStructure {
            noise: None,
            hard: Vec::new(),
            applied: (0..n).map(|p| (p, None)).collect(),
            dropout_mask: None,
            pure_copy: true,
        };
        return Ok((x.clone(), structure));
    }

    let xn = tensor::layer_norm(x, &params.ln_gain, &params.ln_bias, LN_EPS)?;
    let scores = match_scores(&xn, &params.patterns, &params.copy_bias)?;

    let noise = match (frozen, &mut *mode) {
        (Some(fs), _) => fs.noise.clone(),
        (None, Mode::Train(rng)) => Some(assign::gumbel_noise(scores.len(), &mut **rng)),
        (None, _) => None,
    };
    let perturbed = match &noise {
        Some(nz) => tensor::add_buffer(&scores, nz)?,
        None => scores.clone(),
    };
    let soft =
        assign::normalize_with_copy(&perturbed, cfg.temperature, cfg.sinkhorn_iters)?;
    let (hard, applied) = match frozen {
        Some(fs) => (fs.hard.clone(), fs.applied.clone()),
        None => assign::hard_decode(&soft, lp, n),
    };
    // Frozen replay keeps the recorded discrete choices but gates with the
    // soft matrix directly, so the whole graph is the differentiable
    // surrogate the straight-through estimator approximates.
    let gate = match frozen {
        Some(_) => soft.clone(),
        None => tensor::ste_gate(&soft, &hard)?,
    };

    let (mut y, copy_pairs) = rewrite_apply(&xn, &params.replacements, &gate, &applied, lp)?;

    let dropout_mask = match (frozen, &mut *mode) {
        (Some(fs), _) => fs.dropout_mask.clone(),
        (None, Mode::Train(rng)) if cfg.dropout > 0.0 => {
            let (m, d) = (y.shape()[0], y.shape()[1]);
            let mut mask = vec![1.0; m * d];
            // copy rows stay intact; every other row came from a fire
            let copy_rows: std::collections::BTreeSet<usize> =
                copy_pairs.iter().map(|(o, _)| *o).collect();
            let keep = 1.0 - cfg.dropout;
            for row in 0..m {
                if copy_rows.contains(&row) {
                    continue;
                }
                for j in 0..d {
                    mask[row * d + j] = if rnd::uniform01(&mut **rng) < keep {
                        1.0 / keep
                    } else {
                        0.0
                    };
                }
            }
            Some(mask)
        }
        _ => None,
    };
    if let Some(mask) = &dropout_mask {
        y = tensor::mul_mask(&y, mask)?;
    }
    if cfg.residual_enabled {
        y = residual_add(&y, x, &copy_pairs)?;
    }

    let structure = LayerStructure {
        noise,
        hard,
        applied,
        dropout_mask,
        pure_copy: false,
    };
    Ok((y, structure))
}

impl Model {
    /// Fresh model with seeded parameter initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let v = config.vocab.len();
        let std_rule = 1.0 / (d as f64).sqrt();
        let mut registry = ParameterRegistry::new();

        let emb_data: Vec<f64> = (0..v * d).map(|_| rnd::randn(&mut rng)).collect();
        let embedding = registry.register(
            "embedding",
            Tensor::param(vec![v, d], emb_data)?,
        );

        let mut layers = Vec::new();
        for (k, &(lp, lq)) in config.layers.iter().enumerate() {
            let r = config.rules;
            let pat: Vec<f64> = (0..r * lp * d)
                .map(|_| rnd::randn(&mut rng) * std_rule)
                .collect();
            let rep: Vec<f64> = (0..r * lq * d)
                .map(|_| rnd::randn(&mut rng) * std_rule)
                .collect();
            let params = LayerParams {
                patterns: registry.register(
                    &format!("layer{k}.patterns"),
                    Tensor::param(vec![r, lp, d], pat)?,
                ),
                replacements: registry.register(
                    &format!("layer{k}.replacements"),
                    Tensor::param(vec![r, lq, d], rep)?,
                ),
                copy_bias: registry.register(
                    &format!("layer{k}.copy_bias"),
                    Tensor::param(vec![], vec![config.copy_bias_init])?,
                ),
                ln_gain: registry.register(
                    &format!("layer{k}.ln_gain"),
                    Tensor::param(vec![d], vec![1.0; d])?,
                ),
                ln_bias: registry.register(
                    &format!("layer{k}.ln_bias"),
                    Tensor::param(vec![d], vec![0.0; d])?,
                ),
            };
            layers.push(params);
        }
        Ok(Model {
            config,
            registry,
            embedding,
            layers,
        })
    }

    /// Runs the stack on `input_ids` with EOS appended, decoding the final
    /// rows against the tied embedding.
    pub fn forward(&self, input_ids: &[u32], mode: &mut Mode) -> Result<ForwardTrace> {
        if let Mode::Frozen(fs) = mode {
            if fs.len() != self.layers.len() {
                return Err(Error::InvalidArgument(format!(
                    "frozen structure has {} layers, model has {}",
                    fs.len(),
                    self.layers.len()
                )));
            }
        }
        let mut ids: Vec<usize> = input_ids.iter().map(|&i| i as usize).collect();
        ids.push(self.config.vocab.eos_id() as usize);
        for &i in &ids {
            if i >= self.config.vocab.len() {
                return Err(Error::InvalidArgument(format!(
                    "token id {i} out of vocabulary range"
                )));
            }
        }
        let mut h = tensor::gather_rows(&self.embedding, &ids)?;
        let mut structures = Vec::with_capacity(self.layers.len());
        for (k, params) in self.layers.iter().enumerate() {
            let lp = self.config.layers[k].0;
            let frozen = match mode {
                Mode::Frozen(fs) => Some(&fs[k]),
                _ => None,
            };
            let (y, st) = layer_forward(&h, params, lp, &self.config, mode, frozen)?;
            h = y;
            structures.push(st);
        }
        let logits = tensor::matmul_nt(&h, &self.embedding)?;
        Ok(ForwardTrace {
            hidden: h,
            logits,
            structures,
        })
    }

    /// Deterministic decode: argmax rows, truncated or PAD-padded to
    /// `max_output_len`.
    pub fn predict(&self, input_ids: &[u32]) -> Result<Vec<u32>> {
        let trace = self.forward(input_ids, &mut Mode::Eval)?;
        let s = trace.logits.shape();
        let (m, v) = (s[0], s[1]);
        let lv = trace.logits.data();
        let mut out = Vec::with_capacity(self.config.max_output_len);
        for i in 0..m.min(self.config.max_output_len) {
            let row = &lv[i * v..(i + 1) * v];
            let mut best = 0usize;
            for j in 1..v {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(best as u32);
        }
        while out.len() < self.config.max_output_len {
            out.push(self.config.vocab.pad_id());
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.to_doc().save(&dir.join("model.cfg"))?;
        self.registry.save(&dir.join("model.ckpt"))
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let doc = KvDoc::load(&dir.join("model.cfg"))?;
        let config = ModelConfig::from_doc(&doc)?;
        let mut model = Model::new(config, 0)?;
        model.registry.load(&dir.join("model.ckpt"))?;
        Ok(model)
    }
}

/// Human-readable dump of every rule: nearest vocabulary tokens (by cosine
/// against the embedding) for each pattern and replacement slot, plus how
/// often each rule fired over the given inputs.
pub fn inspect_rules(model: &Model, inputs: &[Vec<u32>]) -> Result<String> {
    let v = model.config.vocab.len();
    let d = model.config.d;
    let ev = model.embedding.to_vec();
    let enorm: Vec<f64> = (0..v)
        .map(|i| {
            ev[i * d..(i + 1) * d]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let nearest = |slot: &[f64]| -> String {
        let sn = slot.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sn < 1e-12 {
            return "~0".to_string();
        }
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for i in 0..v {
            if enorm[i] < 1e-12 {
                continue;
            }
            let dot: f64 = slot
                .iter()
                .zip(&ev[i * d..(i + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            let cos = dot / (sn * enorm[i]);
            if cos > best_cos {
                best_cos = cos;
                best = i;
            }
        }
        format!("{}({:+.2})", model.config.vocab.token(best as u32), best_cos)
    };

    let mut fire_counts = vec![vec![0usize; model.config.rules]; model.layers.len()];
    for ids in inputs {
        let trace = model.forward(ids, &mut Mode::Eval)?;
        for (k, st) in trace.structures.iter().enumerate() {
            for &(_, rule) in &st.applied {
                if let Some(r) = rule {
                    fire_counts[k][r] += 1;
                }
            }
        }
    }

    let mut out = String::new();
    for (k, params) in model.layers.iter().enumerate() {
        let (lp, lq) = model.config.layers[k];
        out.push_str(&format!("layer {k} (Lp={lp} Lq={lq})\n"));
        let pv = params.patterns.to_vec();
        let qv = params.replacements.to_vec();
        for r in 0..model.config.rules {
            let pat: Vec<String> = (0..lp)
                .map(|s| nearest(&pv[(r * lp + s) * d..(r * lp + s + 1) * d]))
                .collect();
            let rep: Vec<String> = (0..lq)
                .map(|s| nearest(&qv[(r * lq + s) * d..(r * lq + s + 1) * d]))
                .collect();
            let rep_s = if lq == 0 {
                "(delete)".to_string()
            } else {
                rep.join(" ")
            };
            out.push_str(&format!(
                "  rule {r:>3}  fires {:>6}  {} -> {}\n",
                fire_counts[k][r],
                pat.join(" "),
                rep_s
            ));
        }
    }
    Ok(out)
}
