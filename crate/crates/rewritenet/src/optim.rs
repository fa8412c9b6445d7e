//! Named parameter registry and the Adam optimizer.

use std::collections::BTreeMap;
use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in (0,1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

struct Slot {
    tensor: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Ordered map from parameter path to tensor plus per-parameter Adam state.
#[derive(Default)]
pub struct ParameterRegistry {
    slots: Vec<(String, Slot)>,
    index: BTreeMap<String, usize>,
    step: u64,
}

impl ParameterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Tensor {
        assert!(
            tensor.requires_grad(),
            "registered parameters must require gradients"
        );
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let n = tensor.len();
        self.index.insert(name.to_string(), self.slots.len());
        self.slots.push((
            name.to_string(),
            Slot {
                tensor: tensor.clone(),
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        ));
        tensor
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.index.get(name).map(|&i| self.slots[i].1.tensor.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.slots.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.slots.iter().map(|(_, s)| s.tensor.clone()).collect()
    }

    /// Zeroes every gradient, materializing zero buffers for parameters
    /// that have never received one (a layer the forward never reaches
    /// legitimately has zero gradient).
    pub fn zero_grads(&self) {
        for (_, s) in &self.slots {
            s.tensor.zero_grad();
            if s.tensor.grad().is_none() {
                s.tensor.accumulate_grad(&vec![0.0; s.tensor.len()]);
            }
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&self, max_norm: f64) -> Result<f64> {
        let mut sq = 0.0;
        for (name, s) in &self.slots {
            let g = s
                .tensor
                .grad()
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for (_, s) in &self.slots {
                let g = s.tensor.grad().unwrap();
                // scale by overwriting: zero then re-accumulate is wasteful,
                // so mutate through the public element API
                let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
                s.tensor.zero_grad();
                s.tensor.accumulate_grad(&scaled);
            }
        }
        Ok(norm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let items: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .slots
            .iter()
            .map(|(n, s)| (n.clone(), s.tensor.shape(), s.tensor.to_vec()))
            .collect();
        checkpoint::save_tensors(path, &items)
    }

    /// Adam state goes in a sibling file with the same container layout.
    pub fn save_optimizer_state(&self, path: &Path) -> Result<()> {
        let mut items = Vec::new();
        items.push(("step".to_string(), vec![], vec![self.step as f64]));
        for (n, s) in &self.slots {
            items.push((format!("m.{n}"), s.tensor.shape(), s.m.clone()));
            items.push((format!("v.{n}"), s.tensor.shape(), s.v.clone()));
        }
        checkpoint::save_tensors(path, &items)
    }

    /// Loads values into already-registered parameters; names and shapes
    /// must match exactly.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let items = checkpoint::load_tensors(path)?;
        if items.len() != self.slots.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                self.slots.len(),
                items.len()
            )));
        }
        for (name, shape, data) in items {
            let idx = *self
                .index
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let slot = &self.slots[idx].1;
            if slot.tensor.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs checkpoint {:?}",
                    slot.tensor.shape(),
                    shape
                )));
            }
            slot.tensor.set_data(data);
        }
        Ok(())
    }
}

/// One Adam update with bias correction; gradients are zeroed afterwards.
pub fn adam_step(registry: &mut ParameterRegistry, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    // Fail before mutating anything.
    for (name, s) in &registry.slots {
        if s.tensor.grad().is_none() {
            return Err(Error::MissingGradient(name.clone()));
        }
    }
    registry.step += 1;
    let t = registry.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (_, s) in registry.slots.iter_mut() {
        let g = s.tensor.grad().unwrap();
        for j in 0..g.len() {
            s.m[j] = cfg.beta1 * s.m[j] + (1.0 - cfg.beta1) * g[j];
            s.v[j] = cfg.beta2 * s.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = s.m[j] / bc1;
            let vhat = s.v[j] / bc2;
            let cur = s.tensor.get_elem(j);
            s.tensor
                .set_elem(j, cur - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon));
        }
        s.tensor.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    fn single_param(v: f64) -> (ParameterRegistry, Tensor) {
        let mut reg = ParameterRegistry::new();
        let p = reg.register("w", Tensor::param(vec![1], vec![v]).unwrap());
        (reg, p)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let (mut reg, p) = single_param(1.5);
        let loss = tensor::scale(&p, 0.0).unwrap();
        let loss = tensor::sum_all(&loss).unwrap();
        loss.backward().unwrap();
        adam_step(&mut reg, &AdamConfig::default()).unwrap();
        assert_eq!(p.get_elem(0), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With grad 1 at step 1: mhat = 1, vhat = 1, update = lr/(1+eps).
        let (mut reg, p) = single_param(0.0);
        let loss = tensor::sum_all(&p).unwrap();
        loss.backward().unwrap();
        let cfg = AdamConfig::default();
        adam_step(&mut reg, &cfg).unwrap();
        let expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
        assert!((p.get_elem(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn consecutive_identical_steps_shrink() {
        let (mut reg, p) = single_param(0.0);
        let cfg = AdamConfig::default();
        let before = p.get_elem(0);
        tensor::sum_all(&p).unwrap().backward().unwrap();
        adam_step(&mut reg, &cfg).unwrap();
        let step1 = (p.get_elem(0) - before).abs();
        let mid = p.get_elem(0);
        tensor::sum_all(&p).unwrap().backward().unwrap();
        adam_step(&mut reg, &cfg).unwrap();
        let step2 = (p.get_elem(0) - mid).abs();
        assert!(step2 <= step1 * (1.0 + 1e-6), "{step2} vs {step1}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut reg, _p) = single_param(0.0);
        assert!(matches!(
            adam_step(&mut reg, &AdamConfig::default()),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn clip_reduces_norm() {
        let mut reg = ParameterRegistry::new();
        let p = reg.register("w", Tensor::param(vec![2], vec![0.0, 0.0]).unwrap());
        let s = tensor::scale(&p, 100.0).unwrap();
        tensor::sum_all(&s).unwrap().backward().unwrap();
        let norm = reg.clip_global_norm(1.0).unwrap();
        assert!(norm > 1.0);
        let g = p.grad().unwrap();
        let clipped: f64 = g.iter().map(|x| x * x).sum::<f64>();
        assert!((clipped.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn registry_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut reg = ParameterRegistry::new();
        reg.register("a", Tensor::param(vec![2], vec![1.0, 2.0]).unwrap());
        reg.register("b", Tensor::param(vec![], vec![-0.5]).unwrap());
        reg.save(&path).unwrap();

        let mut reg2 = ParameterRegistry::new();
        let a = reg2.register("a", Tensor::param(vec![2], vec![0.0, 0.0]).unwrap());
        let b = reg2.register("b", Tensor::param(vec![], vec![0.0]).unwrap());
        reg2.load(&path).unwrap();
        assert_eq!(a.to_vec(), vec![1.0, 2.0]);
        assert_eq!(b.to_vec(), vec![-0.5]);
    }
}
