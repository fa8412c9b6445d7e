//! End-to-end acceptance suite. Each test prints one PASS/FAIL line with
//! the measured numbers before asserting, so the full picture survives in
//! the test log even when a gate is missed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rewritenet::assign::{self, hard_decode};
use rewritenet::discrete::{rewrite_pass, DiscreteRule, Fst};
use rewritenet::error::Result;
use rewritenet::flops::{flops_estimate, FlopParams, ModelKind};
use rewritenet::fstsim;
use rewritenet::layer::{rewrite_apply, Mode, Model, ModelConfig};
use rewritenet::optim::AdamConfig;
use rewritenet::sweep::{ablation_sweep, render_table, SweepAxis};
use rewritenet::tasks::{self, DatasetRecord, SplitSpec};
use rewritenet::tensor::{self, Tensor};
use rewritenet::train::{evaluate, train, Task, TrainConfig};
use rewritenet::vocab::Vocab;

fn report(id: u32, ok: bool, detail: &str) {
    println!(
        "acceptance {:02} {}: {detail}",
        id,
        if ok { "PASS" } else { "FAIL" }
    );
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

/// 1. Row and column sums of the normalized matrix converge to 1.
#[test]
fn criterion_01_doubly_stochastic_normalization() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst50 = 0.0f64;
    let mut worst10 = 0.0f64;
    for _ in 0..100 {
        // unit-scale logits, matching score matrices after the 1/sqrt(d) scaling
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits = Tensor::from_vec(vec![8, 8], data).unwrap();
        for (iters, worst) in [(50usize, &mut worst50), (10, &mut worst10)] {
            let m = assign::sinkhorn_normalize(&logits, 1.0, iters).unwrap();
            let v = m.to_vec();
            for i in 0..8 {
                let row: f64 = v[i * 8..(i + 1) * 8].iter().sum();
                let col: f64 = (0..8).map(|r| v[r * 8 + i]).sum();
                *worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst50 < 1e-6 && worst10 < 1e-4 && elapsed.as_secs_f64() < 1.0;
    report(
        1,
        ok,
        &format!(
            "marginal error {worst50:.2e} at 50 iters, {worst10:.2e} at 10 iters, {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    );
    assert!(ok);
}

/// 2. Soft-path gradients with frozen structure match finite differences.
#[test]
fn criterion_02_gradients_match_finite_differences() {
    let start = Instant::now();
    let vocab = Vocab::new(["a", "b", "c", "d"]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let config = ModelConfig {
            d: 8,
            rules: 4,
            layers: vec![(2, 1), (1, 1)],
            max_output_len: 12,
            residual_enabled: inst % 2 == 0,
            dropout: 0.0,
            temperature: 0.7,
            sinkhorn_iters: 1,
            copy_bias_init: 1.0,
            vocab: vocab.clone(),
        };
        let model = Model::new(config, 1000 + inst).unwrap();
        // 5 input tokens plus the appended end marker: 6 rows
        let ids: Vec<u32> = (0..5).map(|_| rng.random_range(2..6)).collect();
        let trace = model.forward(&ids, &mut Mode::Train(&mut rng)).unwrap();
        let structures = trace.structures;
        let targets: Vec<usize> = (0..20).map(|_| rng.random_range(0..6)).collect();
        let mut f = || -> Result<Tensor> {
            let t = model.forward(&ids, &mut Mode::Frozen(&structures))?;
            let rows = t.logits.shape()[0];
            let mask = vec![true; rows];
            tensor::cross_entropy(&t.logits, &targets[..rows], &mask)
        };
        let params = model.registry.tensors();
        let err = tensor::finite_diff_check(&mut f, &params, 1e-5).unwrap();
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-3 && elapsed.as_secs() < 60;
    report(
        2,
        ok,
        &format!(
            "max relative gradient error {worst:.2e} over 20 instances, {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

/// 3. One-hot rewrite application agrees with the symbolic engine.
#[test]
fn criterion_03_one_hot_apply_matches_discrete_engine() {
    let tokens = ["a", "b", "c", "d", "e"];
    let v = tokens.len();
    let id_of = |t: &str| tokens.iter().position(|&x| x == t).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20usize);
        let lp = rng.random_range(1..=3.min(n));
        let lq = rng.random_range(0..=3usize);
        let string: Vec<String> = (0..n)
            .map(|_| tokens[rng.random_range(0..v)].to_string())
            .collect();
        let pattern: Vec<String> = (0..lp)
            .map(|_| tokens[rng.random_range(0..v)].to_string())
            .collect();
        let replacement: Vec<String> = (0..lq)
            .map(|_| tokens[rng.random_range(0..v)].to_string())
            .collect();
        let rule = DiscreteRule::new(pattern.clone(), replacement.clone()).unwrap();
        let expected = rewrite_pass(&string, &[rule]);

        // exact-match scores: lp on a full window match, below lp otherwise;
        // the copy column sits strictly between
        let rows = n + 1 - lp;
        let mut scores = vec![0.0; rows * 2];
        for i in 0..rows {
            let hits = (0..lp).filter(|&k| string[i + k] == pattern[k]).count();
            scores[i * 2] = hits as f64;
            scores[i * 2 + 1] = lp as f64 - 0.5;
        }
        let score_t = Tensor::from_vec(vec![rows, 2], scores).unwrap();
        let (hard, applied) = hard_decode(&score_t, lp, n);
        let gate = Tensor::from_vec(vec![rows, 2], hard).unwrap();

        let mut x = vec![0.0; n * v];
        for (i, s) in string.iter().enumerate() {
            x[i * v + id_of(s)] = 1.0;
        }
        let xn = Tensor::from_vec(vec![n, v], x).unwrap();
        let mut q = vec![0.0; lq * v];
        for (k, s) in replacement.iter().enumerate() {
            q[k * v + id_of(s)] = 1.0;
        }
        let reps = Tensor::from_vec(vec![1, lq, v], q).unwrap();

        let (out, _) = rewrite_apply(&xn, &reps, &gate, &applied, lp).unwrap();
        let ov = out.to_vec();
        let m = out.shape()[0];
        let got: Vec<String> = (0..m)
            .map(|i| {
                let row = &ov[i * v..(i + 1) * v];
                let best = (0..v).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                tokens[best].to_string()
            })
            .collect();
        if got != expected {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    report(3, ok, &format!("{mismatches} mismatches over 1000 cases"));
    assert!(ok);
}

/// 4. Compiled transducer models reproduce their machines exhaustively.
#[test]
fn criterion_04_compiled_transducers_match_exhaustively() {
    let start = Instant::now();
    let mut ok = true;
    let mut details = Vec::new();
    for name in ["parity.fst", "mod3.fst"] {
        let fst = Fst::load(&asset(name)).unwrap();
        let report = fstsim::verify_exhaustive(&fst, 8).unwrap();
        ok &= report.all_match();
        details.push(format!(
            "{name} {}/{} match",
            report.total - report.mismatches.len(),
            report.total
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed.as_secs() < 60;
    report(
        4,
        ok,
        &format!("{}, {:.1} s", details.join(", "), elapsed.as_secs_f64()),
    );
    assert!(ok);
}

fn compression_vocab_config(d: usize, rules: usize, layers: Vec<(usize, usize)>) -> ModelConfig {
    ModelConfig {
        d,
        rules,
        layers,
        max_output_len: 24,
        residual_enabled: false,
        dropout: 0.0,
        temperature: 0.5,
        sinkhorn_iters: 1,
        copy_bias_init: 2.0,
        vocab: tasks::compression_vocab().unwrap(),
    }
}

/// Training data for the deletion task: every sample contains at least one
/// removable trigram, so the structural signal is present in every batch.
/// Held-out sets stay on the unfiltered distribution.
fn deletion_bearing(min: usize, max: usize, n: usize, seed: u64) -> Vec<DatasetRecord> {
    let pool = tasks::gen_compression(min, max, n * 8, seed, false).unwrap();
    let out: Vec<DatasetRecord> = pool
        .into_iter()
        .filter(|r| r.tgt.len() < r.src.len())
        .take(n)
        .collect();
    assert_eq!(out.len(), n, "pool too small for {n} deletion samples");
    out
}

/// 5. The deletion task trains to >= 95% exact match on held-out strings.
#[test]
fn criterion_05_compression_training_reaches_em() {
    let start = Instant::now();
    let dir = out_dir("compression");
    tasks::write_dataset(&deletion_bearing(3, 20, 2000, 11), &dir.join("train.tsv")).unwrap();
    tasks::write_dataset(
        &tasks::gen_compression(3, 20, 300, 12, false).unwrap(),
        &dir.join("valid.tsv"),
    )
    .unwrap();
    tasks::write_dataset(
        &tasks::gen_compression(3, 20, 1000, 13, false).unwrap(),
        &dir.join("test.tsv"),
    )
    .unwrap();

    let mut model = compression_vocab_config(64, 32, vec![(3, 0), (2, 0), (1, 1), (1, 1)]);
    model.copy_bias_init = 4.5;
    let cfg = TrainConfig {
        steps: 20_000,
        batch_size: 16,
        adam: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        eval_every: 1000,
        checkpoint_dir: dir.join("run"),
        data_dir: dir.clone(),
        seed: 0,
        task: Task::Compression,
        model,
        clip_norm: 1.0,
    };
    let outcome = train(&cfg).unwrap();
    let eval = evaluate(
        &outcome.best_dir,
        &dir.join("test.tsv"),
        Some(&dir.join("predictions.tsv")),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let ok = eval.em >= 0.95;
    report(
        5,
        ok,
        &format!(
            "test EM {:.4} (valid best {:.4} at step {}), {:.0} s",
            eval.em,
            outcome.best_em,
            outcome.best_step,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

/// 6. Command-to-action training: the gate asks for 80% in-distribution
/// exact match; the held-out longer-target split is evaluated and reported
/// alongside. The "after" connective reorders variable-length clause
/// expansions, which fixed-replacement local rewriting cannot express, so
/// the in-distribution ceiling for this model family sits near 53% and the
/// gate is expected to fail; the measured numbers are printed regardless.
#[test]
fn criterion_06_scan_training_in_distribution_em() {
    let start = Instant::now();
    let dir = out_dir("scan");
    let splits = tasks::scan_length_splits(16, 21);
    tasks::write_dataset(
        &tasks::gen_scan(&SplitSpec::new("train", 0, 16, 21, 10_000)).unwrap(),
        &dir.join("train.tsv"),
    )
    .unwrap();
    tasks::write_dataset(&tasks::gen_scan(&splits[1]).unwrap(), &dir.join("valid.tsv")).unwrap();
    tasks::write_dataset(&tasks::gen_scan(&splits[2]).unwrap(), &dir.join("test.tsv")).unwrap();

    let cfg = TrainConfig {
        steps: 20_000,
        batch_size: 16,
        adam: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        eval_every: 2000,
        checkpoint_dir: dir.join("run"),
        data_dir: dir.clone(),
        seed: 0,
        task: Task::Scan,
        model: ModelConfig {
            d: 64,
            rules: 32,
            layers: vec![(1, 0), (3, 4), (3, 8), (1, 1)],
            max_output_len: 52,
            residual_enabled: false,
            dropout: 0.0,
            temperature: 0.5,
            sinkhorn_iters: 1,
            copy_bias_init: 4.5,
            vocab: tasks::scan_vocab().unwrap(),
        },
        clip_norm: 1.0,
    };
    let outcome = train(&cfg).unwrap();
    let length_split = evaluate(
        &outcome.best_dir,
        &dir.join("test.tsv"),
        Some(&dir.join("test_predictions.tsv")),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let ok = outcome.best_em >= 0.80;
    report(
        6,
        ok,
        &format!(
            "in-distribution EM {:.4}, length-split test EM {:.4}, {:.0} s",
            outcome.best_em,
            length_split.em,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

/// 7. Reversal training stays finite and the smoothed loss over the first
/// 2000 steps never increases between 200-step windows.
#[test]
fn criterion_07_reversal_training_is_stable() {
    let dir = out_dir("reversal");
    tasks::write_dataset(
        &tasks::gen_reversal(10, 30, 64, 2000, 31).unwrap(),
        &dir.join("train.tsv"),
    )
    .unwrap();
    tasks::write_dataset(
        &tasks::gen_reversal(10, 30, 64, 300, 32).unwrap(),
        &dir.join("valid.tsv"),
    )
    .unwrap();
    let cfg = TrainConfig {
        steps: 20_000,
        batch_size: 16,
        adam: AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        },
        eval_every: 2000,
        checkpoint_dir: dir.join("run"),
        data_dir: dir.clone(),
        seed: 0,
        task: Task::Reversal,
        model: ModelConfig {
            d: 32,
            rules: 16,
            layers: vec![(1, 1), (1, 1)],
            max_output_len: 32,
            residual_enabled: false,
            dropout: 0.0,
            temperature: 0.5,
            sinkhorn_iters: 1,
            copy_bias_init: 3.0,
            vocab: tasks::reversal_vocab(64).unwrap(),
        },
        clip_norm: 1.0,
    };
    // train() fails on any non-finite loss, so completion means NaN-free
    let outcome = train(&cfg).unwrap();
    let metrics = std::fs::read_to_string(&outcome.metrics_path).unwrap();
    let losses: Vec<f64> = metrics
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(losses.len() >= 2000);
    let window = 200;
    let means: Vec<f64> = (0..2000 / window)
        .map(|w| losses[w * window..(w + 1) * window].iter().sum::<f64>() / window as f64)
        .collect();
    let monotone = means.windows(2).all(|p| p[1] <= p[0] + 1e-9);
    let ok = monotone && losses.iter().all(|l| l.is_finite());
    report(
        7,
        ok,
        &format!(
            "20000 steps finite, smoothed loss {:.3} -> {:.3} over first 2000 steps, monotone: {monotone}",
            means[0],
            means[means.len() - 1]
        ),
    );
    assert!(ok);
}

/// 8. Analytic cost model: absolute value and baseline ratio.
#[test]
fn criterion_08_flop_estimates_in_range() {
    let params = FlopParams::default();
    let rn = flops_estimate(ModelKind::RewriteNet, &params).unwrap().gflops();
    let tf = flops_estimate(ModelKind::Transformer, &params).unwrap().gflops();
    let ratio = tf / rn;
    let ok = (rn - 0.12).abs() / 0.12 <= 0.5 && (5.0..=25.0).contains(&ratio);
    report(
        8,
        ok,
        &format!("rewritenet {rn:.3} GFLOPs (target 0.12 +/- 50%), transformer ratio {ratio:.1} in [5, 25]"),
    );
    assert!(ok);
}

/// 9. Ablation sweeps over rule count and depth; more rules must not hurt
/// at equal budget.
#[test]
fn criterion_09_ablation_sweep_rules_and_depth() {
    let dir = out_dir("sweep");
    tasks::write_dataset(&deletion_bearing(3, 12, 2000, 13), &dir.join("train.tsv")).unwrap();
    tasks::write_dataset(
        &tasks::gen_compression(3, 12, 300, 12, false).unwrap(),
        &dir.join("valid.tsv"),
    )
    .unwrap();
    let base = TrainConfig {
        steps: 8000,
        batch_size: 8,
        adam: AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        eval_every: 250,
        checkpoint_dir: dir.join("base"),
        data_dir: dir.clone(),
        seed: 0,
        task: Task::Compression,
        model: compression_vocab_config(16, 32, vec![(3, 0), (1, 1)]),
        clip_norm: 1.0,
    };
    let rule_cells = ablation_sweep(&base, SweepAxis::Rules, 8000, &dir.join("rules")).unwrap();
    let depth_cells = ablation_sweep(&base, SweepAxis::Layers, 2000, &dir.join("layers")).unwrap();
    print!("{}", render_table(&rule_cells));
    print!("{}", render_table(&depth_cells));

    let em_at = |cells: &[rewritenet::sweep::SweepCell], v: &str| {
        cells.iter().find(|c| c.value == v).unwrap().best_em
    };
    let em4 = em_at(&rule_cells, "4");
    let em32 = em_at(&rule_cells, "32");
    let ok = rule_cells.len() == 4 && depth_cells.len() == 4 && em4 <= em32;
    report(
        9,
        ok,
        &format!(
            "{} rule cells, {} depth cells, EM 4 rules {em4:.4} <= EM 32 rules {em32:.4}",
            rule_cells.len(),
            depth_cells.len()
        ),
    );
    assert!(ok);
}

/// 10. Identical seeded runs produce byte-identical metrics logs.
#[test]
fn criterion_10_seeded_training_is_deterministic() {
    let dir = out_dir("determinism");
    tasks::write_dataset(&deletion_bearing(3, 8, 64, 51), &dir.join("train.tsv")).unwrap();
    tasks::write_dataset(
        &tasks::gen_compression(3, 8, 32, 52, false).unwrap(),
        &dir.join("valid.tsv"),
    )
    .unwrap();
    let mut logs = Vec::new();
    for run in 0..2 {
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 8,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            eval_every: 50,
            checkpoint_dir: dir.join(format!("run{run}")),
            data_dir: dir.clone(),
            seed: 7,
            task: Task::Compression,
            model: compression_vocab_config(16, 8, vec![(3, 0), (1, 1)]),
            clip_norm: 1.0,
        };
        let outcome = train(&cfg).unwrap();
        logs.push(std::fs::read(&outcome.metrics_path).unwrap());
    }
    let ok = logs[0] == logs[1];
    report(
        10,
        ok,
        &format!("two seeded runs, metrics logs identical: {ok}"),
    );
    assert!(ok);
}
