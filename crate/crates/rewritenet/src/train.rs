//! Minibatch Adam training with exact-match validation and best-checkpoint
//! selection, plus standalone evaluation of saved checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layer::{Mode, Model, ModelConfig};
use crate::optim::{adam_step, AdamConfig};
use crate::runconfig::KvDoc;
use crate::tasks::{self, DatasetRecord};
use crate::tensor;
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Reversal,
    Scan,
    Compression,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Reversal => "reversal",
            Task::Scan => "scan",
            Task::Compression => "compression",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "reversal" => Ok(Task::Reversal),
            "scan" => Ok(Task::Scan),
            "compression" => Ok(Task::Compression),
            other => Err(Error::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }

    pub fn vocab(self) -> Result<Vocab> {
        match self {
            Task::Reversal => tasks::reversal_vocab(64),
            Task::Scan => tasks::scan_vocab(),
            Task::Compression => tasks::compression_vocab(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub checkpoint_dir: PathBuf,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub task: Task,
    pub model: ModelConfig,
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".to_string(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "eval_every must be at least 1".to_string(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        self.adam.validate()?;
        self.model.validate()
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("task", self.task.name());
        doc.push("steps", self.steps);
        doc.push("batch_size", self.batch_size);
        doc.push("eval_every", self.eval_every);
        doc.push("seed", self.seed);
        doc.push("clip_norm", self.clip_norm);
        doc.push("learning_rate", self.adam.learning_rate);
        doc.push("beta1", self.adam.beta1);
        doc.push("beta2", self.adam.beta2);
        doc.push("epsilon", self.adam.epsilon);
        doc.push("data_dir", self.data_dir.display());
        doc.push("checkpoint_dir", self.checkpoint_dir.display());
        let model_doc = self.model.to_doc();
        for key in model_doc.keys() {
            doc.push(&format!("model.{key}"), model_doc.get(key).unwrap());
        }
        doc
    }

    pub fn from_doc(doc: &KvDoc) -> Result<TrainConfig> {
        let mut model_doc = KvDoc::new();
        for key in doc.keys() {
            if let Some(mk) = key.strip_prefix("model.") {
                model_doc.push(mk, doc.get(key).unwrap());
            }
        }
        let cfg = TrainConfig {
            task: Task::parse(doc.require("task")?)?,
            steps: doc.parse_field("steps")?,
            batch_size: doc.parse_field("batch_size")?,
            eval_every: doc.parse_field("eval_every")?,
            seed: doc.parse_field("seed")?,
            clip_norm: doc.parse_field("clip_norm")?,
            adam: AdamConfig {
                learning_rate: doc.parse_field("learning_rate")?,
                beta1: doc.parse_field("beta1")?,
                beta2: doc.parse_field("beta2")?,
                epsilon: doc.parse_field("epsilon")?,
            },
            data_dir: PathBuf::from(doc.require("data_dir")?),
            checkpoint_dir: PathBuf::from(doc.require("checkpoint_dir")?),
            model: ModelConfig::from_doc(&model_doc)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_em: f64,
    pub best_step: usize,
    pub final_loss: f64,
    pub best_dir: PathBuf,
    pub metrics_path: PathBuf,
}

struct EncodedSet {
    src: Vec<Vec<u32>>,
    tgt: Vec<Vec<String>>,
    /// Target ids with EOS appended, what the logits are scored against.
    tgt_ids: Vec<Vec<usize>>,
}

fn encode_dataset(records: &[DatasetRecord], vocab: &Vocab) -> Result<EncodedSet> {
    let mut set = EncodedSet {
        src: Vec::with_capacity(records.len()),
        tgt: Vec::with_capacity(records.len()),
        tgt_ids: Vec::with_capacity(records.len()),
    };
    for r in records {
        set.src.push(vocab.encode(&r.src).map_err(vocab_mismatch)?);
        let mut ids: Vec<usize> = vocab
            .encode(&r.tgt)
            .map_err(vocab_mismatch)?
            .iter()
            .map(|&i| i as usize)
            .collect();
        ids.push(vocab.eos_id() as usize);
        set.tgt_ids.push(ids);
        set.tgt.push(r.tgt.clone());
    }
    Ok(set)
}

fn vocab_mismatch(e: Error) -> Error {
    match e {
        Error::UnknownToken(t) => {
            Error::VocabMismatch(format!("dataset token '{t}' not in model vocabulary"))
        }
        other => other,
    }
}

/// Mean-per-example, mean-per-position cross entropy of one batch. Output
/// rows past the target are ignored; target rows the model never produced
/// contribute the uniform-prediction constant ln(V). Returns the loss
/// value plus the differentiable node, absent when no position was
/// supervised (then the loss is the constant alone).
fn batch_loss(
    model: &Model,
    set: &EncodedSet,
    batch: &[usize],
    mode_rng: &mut ChaCha8Rng,
) -> Result<(Option<tensor::Tensor>, f64)> {
    let v = model.config.vocab.len();
    let ln_v = (v as f64).ln();
    let mut total: Option<tensor::Tensor> = None;
    let mut constant = 0.0;
    let b = batch.len() as f64;
    for &idx in batch {
        let trace = model.forward(&set.src[idx], &mut Mode::Train(mode_rng))?;
        let m = trace.logits.shape()[0];
        let tgt = &set.tgt_ids[idx];
        let t = tgt.len();
        let supervised = m.min(t);
        constant += (t - supervised) as f64 * ln_v / (t as f64 * b);
        if supervised == 0 {
            continue;
        }
        let mut targets = vec![0usize; m];
        let mut mask = vec![false; m];
        for i in 0..supervised {
            targets[i] = tgt[i];
            mask[i] = true;
        }
        let ce = tensor::cross_entropy(&trace.logits, &targets, &mask)?;
        let scaled = tensor::scale(&ce, supervised as f64 / (t as f64 * b))?;
        total = Some(match total {
            None => scaled,
            Some(acc) => tensor::add(&acc, &scaled)?,
        });
    }
    // A batch can produce zero supervised positions (every output emptied
    // by deletions); the loss is then the constant alone and there is no
    // graph to differentiate.
    match total {
        Some(t) => {
            let node = tensor::add_const(&t, constant)?;
            let v = node.get_elem(0);
            Ok((Some(node), v))
        }
        None => {
            if batch.is_empty() {
                return Err(Error::InvalidArgument("empty batch".to_string()));
            }
            Ok((None, constant))
        }
    }
}

fn validation_em(model: &Model, set: &EncodedSet) -> Result<f64> {
    let mut preds = Vec::with_capacity(set.src.len());
    for src in &set.src {
        let ids = model.predict(src)?;
        preds.push(model.config.vocab.decode(&ids));
    }
    Ok(tasks::corpus_em(&preds, &set.tgt))
}

/// Runs the full loop: seed-deterministic minibatches, global-norm clipped
/// Adam, validation exact match every `eval_every` steps, best checkpoint
/// kept under `<checkpoint_dir>/best`. The per-step metrics log carries no
/// wall-clock times so identical seeds produce identical bytes; timings go
/// to a sibling file.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_recs = tasks::read_dataset(&cfg.data_dir.join("train.tsv"))?;
    let valid_recs = tasks::read_dataset(&cfg.data_dir.join("valid.tsv"))?;
    if train_recs.is_empty() || valid_recs.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".to_string()));
    }
    let train_set = encode_dataset(&train_recs, &cfg.model.vocab)?;
    let valid_set = encode_dataset(&valid_recs, &cfg.model.vocab)?;

    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    cfg.to_doc().save(&cfg.checkpoint_dir.join("train.cfg"))?;

    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut metrics = String::new();
    let mut timings = String::new();
    let metrics_path = cfg.checkpoint_dir.join("metrics.log");
    let timing_path = cfg.checkpoint_dir.join("timing.log");
    let best_dir = cfg.checkpoint_dir.join("best");
    let started = Instant::now();

    let mut best_em = f64::NEG_INFINITY;
    let mut best_step = 0usize;
    let mut final_loss = f64::NAN;

    for step in 1..=cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..train_set.src.len()))
            .collect();
        model.registry.zero_grads();
        let (loss, loss_val) = batch_loss(&model, &train_set, &batch, &mut rng)?;
        if !loss_val.is_finite() {
            let dump = cfg.checkpoint_dir.join("nan_batch.tsv");
            let records: Vec<DatasetRecord> =
                batch.iter().map(|&i| train_recs[i].clone()).collect();
            tasks::write_dataset(&records, &dump)?;
            std::fs::write(&metrics_path, &metrics).map_err(|e| Error::io(&metrics_path, e))?;
            return Err(Error::NanLoss { step, dump });
        }
        final_loss = loss_val;
        if let Some(loss) = loss {
            loss.backward()?;
            model.registry.clip_global_norm(cfg.clip_norm)?;
            adam_step(&mut model.registry, &cfg.adam)?;
        }

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let em = validation_em(&model, &valid_set)?;
            writeln!(metrics, "{step} {loss_val:.6} {em:.4}").unwrap();
            writeln!(timings, "{step} {}", started.elapsed().as_millis()).unwrap();
            if em > best_em {
                best_em = em;
                best_step = step;
                model.save(&best_dir)?;
            }
        } else {
            writeln!(metrics, "{step} {loss_val:.6} -").unwrap();
        }
    }

    std::fs::write(&metrics_path, &metrics).map_err(|e| Error::io(&metrics_path, e))?;
    std::fs::write(&timing_path, &timings).map_err(|e| Error::io(&timing_path, e))?;
    Ok(TrainOutcome {
        best_em,
        best_step,
        final_loss,
        best_dir,
        metrics_path,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub em: f64,
    pub predictions: Vec<DatasetRecord>,
}

/// Deterministic evaluation of a saved checkpoint: noise and dropout off,
/// corpus exact match plus per-example predictions. When `out_path` is
/// given, one `src TAB pred TAB tgt` line per example is written there.
pub fn evaluate(
    checkpoint_dir: &Path,
    dataset_path: &Path,
    out_path: Option<&Path>,
) -> Result<EvalOutcome> {
    let model = Model::load(checkpoint_dir)?;
    let records = tasks::read_dataset(dataset_path)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty dataset {}",
            dataset_path.display()
        )));
    }
    let set = encode_dataset(&records, &model.config.vocab)?;
    let mut preds = Vec::with_capacity(records.len());
    for src in &set.src {
        let ids = model.predict(src)?;
        let toks = model.config.vocab.decode(&model.config.vocab.strip(&ids));
        preds.push(toks);
    }
    let em = tasks::corpus_em(&preds, &set.tgt);
    if let Some(path) = out_path {
        let mut text = String::new();
        for (r, p) in records.iter().zip(&preds) {
            writeln!(text, "{}\t{}\t{}", r.src.join(" "), p.join(" "), r.tgt.join(" "))
                .unwrap();
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    let predictions = records
        .iter()
        .zip(&preds)
        .map(|(r, p)| DatasetRecord {
            src: r.src.clone(),
            tgt: p.clone(),
        })
        .collect();
    Ok(EvalOutcome { em, predictions })
}
