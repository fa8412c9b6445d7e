//! Analytic FLOP estimates for processing one input batch. Multiply-adds
//! count as 2 FLOPs. Baselines are costed on their encoder stack (the
//! part that processes the input); the rewrite model transforms the
//! sequence in place, so its whole forward pass is the input processor.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    RewriteNet,
    Transformer,
    Lstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RewriteNet => "rewritenet",
            ModelKind::Transformer => "transformer",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "rewritenet" => Ok(ModelKind::RewriteNet),
            "transformer" => Ok(ModelKind::Transformer),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::InvalidArgument(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlopReport {
    pub kind: ModelKind,
    pub n: usize,
    pub d: usize,
    pub rules: usize,
    pub lp: usize,
    pub batch: usize,
    pub flops: u64,
}

impl FlopReport {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn render(&self) -> String {
        format!(
            "{:<12} batch={} n={} d={}  {:.3} GFLOPs",
            self.kind.name(),
            self.batch,
            self.n,
            self.d,
            self.gflops()
        )
    }
}

/// Model dimensions for the estimators. Defaults are the benchmark
/// comparison point: batch 64, length 20, d=128, R=32, Lp=2, K=4, 2-layer
/// baselines with FFN 512 and LSTM hidden 256.
#[derive(Debug, Clone)]
pub struct FlopParams {
    pub batch: usize,
    pub n: usize,
    pub d: usize,
    pub rules: usize,
    pub lp: usize,
    pub lq: usize,
    pub layers: usize,
    pub vocab: usize,
    pub sinkhorn_iters: usize,
    pub baseline_layers: usize,
    pub ffn_dim: usize,
    pub lstm_hidden: usize,
}

impl Default for FlopParams {
    fn default() -> FlopParams {
        FlopParams {
            batch: 64,
            n: 20,
            d: 128,
            rules: 32,
            lp: 2,
            lq: 1,
            layers: 4,
            vocab: 20,
            sinkhorn_iters: 1,
            baseline_layers: 2,
            ffn_dim: 512,
            lstm_hidden: 256,
        }
    }
}

impl FlopParams {
    fn validate(&self, kind: ModelKind) -> Result<()> {
        let dims: &[(&str, usize)] = match kind {
            ModelKind::RewriteNet => &[
                ("batch", self.batch),
                ("n", self.n),
                ("d", self.d),
                ("rules", self.rules),
                ("lp", self.lp),
                ("layers", self.layers),
                ("vocab", self.vocab),
                ("sinkhorn_iters", self.sinkhorn_iters),
            ],
            ModelKind::Transformer => &[
                ("batch", self.batch),
                ("n", self.n),
                ("d", self.d),
                ("baseline_layers", self.baseline_layers),
                ("ffn_dim", self.ffn_dim),
            ],
            ModelKind::Lstm => &[
                ("batch", self.batch),
                ("n", self.n),
                ("d", self.d),
                ("baseline_layers", self.baseline_layers),
                ("lstm_hidden", self.lstm_hidden),
            ],
        };
        for (name, v) in dims {
            if *v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.lp > self.n {
            return Err(Error::InvalidArgument(format!(
                "pattern length {} exceeds sequence length {}",
                self.lp, self.n
            )));
        }
        Ok(())
    }
}

pub fn flops_estimate(kind: ModelKind, p: &FlopParams) -> Result<FlopReport> {
    p.validate(kind)?;
    let (b, n, d) = (p.batch as u64, p.n as u64, p.d as u64);
    let flops = match kind {
        ModelKind::RewriteNet => {
            let (r, lp, lq, k) = (p.rules as u64, p.lp as u64, p.lq as u64, p.layers as u64);
            // pattern correlation at every window offset
            let matching = 2 * k * b * (n - lp + 1) * r * lp * d;
            // mean, variance, normalize, gain and bias per element
            let layer_norm = 7 * k * b * n * d;
            // row-wise assignment over R rules plus the copy column
            let assignment = 6 * p.sinkhorn_iters as u64 * k * b * n * (r + 1);
            // gated replacement emission
            let apply = 2 * k * b * n * lq * d;
            // tied output projection
            let decode = 2 * b * n * p.vocab as u64 * d;
            matching + layer_norm + assignment + apply + decode
        }
        ModelKind::Transformer => {
            // per layer: Q/K/V/out projections, QK^T and AV, two FFN matmuls
            let per_layer = 4 * n * d * d + 2 * n * n * d + 2 * n * d * p.ffn_dim as u64;
            2 * p.baseline_layers as u64 * b * per_layer
        }
        ModelKind::Lstm => {
            // bidirectional stack, hidden size split across directions
            let h = p.lstm_hidden as u64 / 2;
            let mut per_step = 2 * 4 * h * (d + h);
            for _ in 1..p.baseline_layers {
                per_step += 2 * 4 * h * (2 * h + h);
            }
            2 * b * n * per_step
        }
    };
    Ok(FlopReport {
        kind,
        n: p.n,
        d: p.d,
        rules: p.rules,
        lp: p.lp,
        batch: p.batch,
        flops,
    })
}
