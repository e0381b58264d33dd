use std::collections::BTreeMap;

use super::graph::{Gradients, Graph};
use super::init::{derive_seed, uniform_values};
use super::tensor::{Real, Tensor};
use super::AutodiffError;

#[derive(Debug, Clone, PartialEq)]
struct Slot<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    trainable: bool,
}

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    slots: BTreeMap<String, Slot<T>>,
    seed: u64,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            slots: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
    ) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        self.slots.insert(
            name,
            Slot {
                value,
                grad: None,
                trainable: true,
            },
        );
        Ok(())
    }

    /// Adds a parameter drawn i.i.d. from `U[-bound, bound]`, seeded by
    /// `(store seed, name)`.
    pub fn insert_uniform(
        &mut self,
        name: impl AsRef<str>,
        shape: Vec<usize>,
        bound: f64,
    ) -> Result<(), AutodiffError> {
        let n = shape.iter().product();
        let name = name.as_ref();
        let values = uniform_values(n, bound, derive_seed(self.seed, name, 0))?;
        self.insert(name, Tensor::new(shape, values)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), AutodiffError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        if slot.value.shape() != value.shape() {
            return Err(AutodiffError::Shape {
                op: "set_parameter",
                detail: format!("{name}: {:?} vs {:?}", slot.value.shape(), value.shape()),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.slots.remove(name).map(|s| s.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn grad(&self, name: &str) -> Option<&[T]> {
        self.slots.get(name).and_then(|s| s.grad.as_deref())
    }

    pub fn set_grad(&mut self, name: &str, grad: Vec<T>) -> Result<(), AutodiffError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        if grad.len() != slot.value.len() {
            return Err(AutodiffError::Shape {
                op: "set_grad",
                detail: format!("{name}: {} vs {}", grad.len(), slot.value.len()),
            });
        }
        slot.grad = Some(grad);
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.slots.get(name).is_some_and(|s| s.trainable)
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, slot) in self.slots.iter_mut() {
            if name.starts_with(prefix) {
                slot.trainable = trainable;
            }
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter(|(_, s)| s.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Adds the parameter gradients of one backward sweep.
    pub fn accumulate(
        &mut self,
        graph: &Graph<T>,
        grads: &Gradients<T>,
    ) -> Result<(), AutodiffError> {
        for (name, var) in graph.param_nodes() {
            let Some(g) = grads.raw(var) else { continue };
            self.accumulate_raw(name, g)?;
        }
        Ok(())
    }

    pub fn accumulate_raw(&mut self, name: &str, g: &[T]) -> Result<(), AutodiffError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        if g.len() != slot.value.len() {
            return Err(AutodiffError::Shape {
                op: "accumulate",
                detail: format!("{name}: {} vs {}", g.len(), slot.value.len()),
            });
        }
        match &mut slot.grad {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a = *a + x;
                }
            }
            None => slot.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad = None;
        }
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            slots: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        Slot {
                            value: s.value.cast(),
                            grad: None,
                            trainable: s.trainable,
                        },
                    )
                })
                .collect(),
            seed: self.seed,
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }
}

/// `λ · Σ θ²` over trainable parameters, built on `graph`.
pub fn l2_penalty<T: Real>(
    graph: &mut Graph<T>,
    store: &ParameterStore<T>,
    lambda: T,
) -> Result<super::Var, AutodiffError> {
    if lambda < T::zero() {
        return Err(AutodiffError::InvalidArgument(format!(
            "L2 weight must be non-negative, got {lambda}"
        )));
    }
    let mut terms = Vec::new();
    for name in store.trainable_names() {
        let p = graph.param(store, &name)?;
        let sq = graph.mul(p, p)?;
        terms.push(graph.sum(sq)?);
    }
    if terms.is_empty() {
        return graph.input(Tensor::scalar(T::zero()));
    }
    let total = graph.concat_cols(&terms)?;
    let total = graph.sum(total)?;
    graph.scale(total, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_penalty_values_and_gradient() {
        let mut store = ParameterStore::<f64>::new(0);
        store
            .insert("w", Tensor::from_f64(vec![2], &[3.0, 4.0]).unwrap())
            .unwrap();
        let mut g = Graph::checked();
        let zero = l2_penalty(&mut g, &store, 0.0).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);
        let one = l2_penalty(&mut g, &store, 1.0).unwrap();
        assert_eq!(g.value(one).item(), 25.0);

        let mut g = Graph::checked();
        let lam = 0.3;
        let pen = l2_penalty(&mut g, &store, lam).unwrap();
        let grads = g.backward(pen).unwrap();
        store.accumulate(&g, &grads).unwrap();
        let grad = store.grad("w").unwrap();
        assert!((grad[0] - 2.0 * lam * 3.0).abs() < 1e-6);
        assert!((grad[1] - 2.0 * lam * 4.0).abs() < 1e-6);
    }

    #[test]
    fn names_iterate_sorted_and_unique() {
        let mut store = ParameterStore::<f32>::new(1);
        store.insert_uniform("b", vec![2], 0.1).unwrap();
        store.insert_uniform("a", vec![2], 0.1).unwrap();
        assert!(store.insert_uniform("a", vec![2], 0.1).is_err());
        assert_eq!(store.names().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn frozen_parameters_are_excluded_from_penalty() {
        let mut store = ParameterStore::<f64>::new(0);
        store.insert("enc.w", Tensor::row(vec![1.0])).unwrap();
        store.insert("head.w", Tensor::row(vec![2.0])).unwrap();
        store.set_trainable("enc.", false);
        let mut g = Graph::new();
        let pen = l2_penalty(&mut g, &store, 1.0).unwrap();
        assert_eq!(g.value(pen).item(), 4.0);
    }
}
