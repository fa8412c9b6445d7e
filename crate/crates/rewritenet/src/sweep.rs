//! Ablation sweeps: trains one model per cell along a single axis at a
//! reduced step budget and tabulates validation exact match.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::{train, TrainConfig};

pub const RULE_CELLS: [usize; 4] = [4, 16, 32, 64];
pub const LAYER_CELLS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Rules,
    Layers,
    Residual,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rules => "rules",
            SweepAxis::Layers => "layers",
            SweepAxis::Residual => "residual",
        }
    }

    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s {
            "rules" => Ok(SweepAxis::Rules),
            "layers" => Ok(SweepAxis::Layers),
            "residual" => Ok(SweepAxis::Residual),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: String,
    pub best_em: f64,
    pub final_loss: f64,
    pub steps: usize,
}

fn cell_config(base: &TrainConfig, axis: SweepAxis, value: &str, budget: usize) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    cfg.steps = budget;
    match axis {
        SweepAxis::Rules => {
            cfg.model.rules = value.parse().unwrap();
        }
        SweepAxis::Layers => {
            let k: usize = value.parse().unwrap();
            // cycle the base layer shapes out to depth k
            let shapes = base.model.layers.clone();
            cfg.model.layers = (0..k).map(|i| shapes[i % shapes.len()]).collect();
        }
        SweepAxis::Residual => {
            cfg.model.residual_enabled = value.parse().unwrap();
        }
    }
    cfg.model.validate()?;
    Ok(cfg)
}

/// Trains one model per cell of the chosen axis, each under
/// `<out_root>/<axis>_<value>`, at `budget` steps.
pub fn ablation_sweep(
    base: &TrainConfig,
    axis: SweepAxis,
    budget: usize,
    out_root: &Path,
) -> Result<Vec<SweepCell>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".to_string()));
    }
    let values: Vec<String> = match axis {
        SweepAxis::Rules => RULE_CELLS.iter().map(|r| r.to_string()).collect(),
        SweepAxis::Layers => LAYER_CELLS.iter().map(|k| k.to_string()).collect(),
        SweepAxis::Residual => vec!["on".to_string(), "off".to_string()],
    };
    let mut cells = Vec::with_capacity(values.len());
    for value in &values {
        let parsed = if axis == SweepAxis::Residual {
            (value == "on").to_string()
        } else {
            value.clone()
        };
        let mut cfg = cell_config(base, axis, &parsed, budget)?;
        cfg.checkpoint_dir = out_root.join(format!("{}_{value}", axis.name()));
        let outcome = train(&cfg)?;
        cells.push(SweepCell {
            axis,
            value: value.clone(),
            best_em: outcome.best_em,
            final_loss: outcome.final_loss,
            steps: budget,
        });
    }
    Ok(cells)
}

/// Aligned human-readable table, one row per cell.
pub fn render_table(cells: &[SweepCell]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<10} {:>8} {:>10} {:>12} {:>8}", "axis", "value", "best_em", "final_loss", "steps").unwrap();
    for c in cells {
        writeln!(
            out,
            "{:<10} {:>8} {:>10.4} {:>12.6} {:>8}",
            c.axis.name(),
            c.value,
            c.best_em,
            c.final_loss,
            c.steps
        )
        .unwrap();
    }
    out
}

/// Machine-readable line-delimited records.
pub fn render_records(cells: &[SweepCell]) -> String {
    let mut out = String::new();
    for c in cells {
        writeln!(
            out,
            "axis={} value={} best_em={:.4} final_loss={:.6} steps={}",
            c.axis.name(),
            c.value,
            c.best_em,
            c.final_loss,
            c.steps
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::ModelConfig;
    use crate::optim::AdamConfig;
    use crate::tasks;
    use crate::train::Task;

    fn base_config(dir: &Path) -> TrainConfig {
        let data = tasks::gen_compression(3, 8, 64, 2, false).unwrap();
        tasks::write_dataset(&data[..48], &dir.join("train.tsv")).unwrap();
        tasks::write_dataset(&data[48..], &dir.join("valid.tsv")).unwrap();
        TrainConfig {
            steps: 20,
            batch_size: 4,
            adam: AdamConfig::default(),
            eval_every: 10,
            checkpoint_dir: dir.join("base"),
            data_dir: dir.to_path_buf(),
            seed: 3,
            task: Task::Compression,
            model: ModelConfig {
                d: 8,
                rules: 2,
                layers: vec![(3, 0), (1, 1)],
                max_output_len: 16,
                residual_enabled: false,
                dropout: 0.0,
                temperature: 0.5,
                sinkhorn_iters: 1,
            copy_bias_init: 1.0,
                vocab: tasks::compression_vocab().unwrap(),
            },
            clip_norm: 1.0,
        }
    }

    #[test]
    fn one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let base = base_config(dir.path());
        let cells = ablation_sweep(&base, SweepAxis::Rules, 5, &dir.path().join("sweep")).unwrap();
        assert_eq!(cells.len(), RULE_CELLS.len());
        let table = render_table(&cells);
        assert_eq!(table.lines().count(), 1 + cells.len());
        let records = render_records(&cells);
        assert_eq!(records.lines().count(), cells.len());
        for r in RULE_CELLS {
            assert!(records.contains(&format!("value={r} ")));
        }
    }

    #[test]
    fn layer_cells_change_depth() {
        let dir = tempfile::tempdir().unwrap();
        let base = base_config(dir.path());
        let cells = ablation_sweep(&base, SweepAxis::Layers, 3, &dir.path().join("sweep")).unwrap();
        assert_eq!(cells.len(), LAYER_CELLS.len());
    }

    #[test]
    fn residual_off_completes_without_nan() {
        let dir = tempfile::tempdir().unwrap();
        let base = base_config(dir.path());
        let cells =
            ablation_sweep(&base, SweepAxis::Residual, 40, &dir.path().join("sweep")).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert!(c.final_loss.is_finite());
        }
    }
}
