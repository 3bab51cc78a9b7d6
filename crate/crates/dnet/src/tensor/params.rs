//! Named trainable parameters at rest.
//!
//! A [`ParamSet`] owns the model's weights between steps. Each forward pass
//! binds every entry into a fresh graph (cheap: tensor clones share storage);
//! after backward the per-graph leaf gradients are accumulated back here in
//! slot order, which keeps batch reductions deterministic regardless of how
//! many worker threads produced them.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient; `None` until a backward pass contributes one.
    pub grad: Option<Tensor>,
}

/// Ordered collection of named parameters; slot order is the storage order
/// used by checkpoints and the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a parameter and returns its slot. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(
            self.slot_of(&name).is_none(),
            "duplicate parameter name '{name}'"
        );
        self.entries.push(Param {
            name,
            value,
            grad: None,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Param {
        &self.entries[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Param {
        &mut self.entries[slot]
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    /// Binds every parameter into `g` as a trainable leaf, in slot order.
    pub fn bind_all(&self, g: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|p| g.param(&p.value)).collect()
    }

    /// Adds `scale * grad` into a slot's accumulated gradient.
    pub fn accumulate_grad(&mut self, slot: usize, grad: &[f32], scale: f32) -> Result<()> {
        let entry = &mut self.entries[slot];
        if grad.len() != entry.value.len() {
            return Err(Error::dim(
                "accumulate_grad",
                format!(
                    "'{}' has {} elements, gradient has {}",
                    entry.name,
                    entry.value.len(),
                    grad.len()
                ),
            ));
        }
        let acc = entry
            .grad
            .get_or_insert_with(|| Tensor::zeros(entry.value.shape()));
        for (a, &g) in acc.data_mut().iter_mut().zip(grad) {
            *a += g * scale;
        }
        Ok(())
    }

    /// Drops all accumulated gradients.
    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    /// L2 norm of one slot's gradient (0 if absent).
    pub fn grad_norm(&self, slot: usize) -> f64 {
        self.entries[slot]
            .grad
            .as_ref()
            .map(|g| g.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }

    /// Total number of scalar weights.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_and_binding_preserve_order() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Tensor::vector(vec![1.0]));
        let b = ps.add("b", Tensor::vector(vec![2.0, 3.0]));
        assert_eq!((a, b), (0, 1));
        assert_eq!(ps.slot_of("b"), Some(1));
        let mut g = Graph::new();
        let vars = ps.bind_all(&mut g);
        assert_eq!(g.value(vars[1]).data(), &[2.0, 3.0]);
    }

    #[test]
    fn accumulate_scales_and_sums() {
        let mut ps = ParamSet::new();
        let s = ps.add("w", Tensor::vector(vec![0.0, 0.0]));
        ps.accumulate_grad(s, &[1.0, 2.0], 0.5).unwrap();
        ps.accumulate_grad(s, &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(ps.get(s).grad.as_ref().unwrap().data(), &[1.5, 1.0]);
        assert!(ps.accumulate_grad(s, &[1.0], 1.0).is_err());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(0.0));
        ps.add("w", Tensor::scalar(1.0));
    }
}
