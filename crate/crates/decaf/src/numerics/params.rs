//! Named parameter store with per-parameter gradient accumulators.

use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
}

/// Named parameter tensors plus gradient accumulators.
///
/// Initialization is derived from `(store seed, parameter name)`, so a
/// parameter's initial value does not depend on creation order and is stable
/// across runs and thread counts.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    entries: IndexMap<String, Entry>,
}

/// FNV-1a; kept local so hashes never change under std releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            entries: IndexMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn name_rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()))
    }

    /// Register a parameter with an explicit value.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(name.into(), Entry { value, grad });
    }

    /// Uniform init in `±limit`, seeded by the parameter name.
    pub fn init_uniform(&mut self, name: &str, shape: Vec<usize>, limit: f64) {
        let mut rng = self.name_rng(name);
        let dist = Uniform::new_inclusive(-limit, limit);
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| dist.sample(&mut rng)).collect();
        self.insert(name, Tensor::new(shape, data).unwrap());
    }

    /// Weight matrix `[fan_in, fan_out]`, uniform in `±sqrt(6/(in+out))`.
    pub fn init_linear_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.init_uniform(name, vec![fan_in, fan_out], limit);
    }

    pub fn init_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn init_ones(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::full(shape, 1.0));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = Tensor::zeros(e.value.shape().to_vec());
        }
    }

    /// Add a gradient contribution for one parameter.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArg(format!("no parameter `{name}`")))?;
        if e.grad.shape() != grad.shape() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("param {:?} vs grad {:?}", e.grad.shape(), grad.shape()),
            ));
        }
        e.grad.add_assign(grad);
        Ok(())
    }

    /// Plain gradient-descent update: `p ← p − lr·g`. Gradients are left in
    /// place; callers zero them at step boundaries.
    pub fn sgd_step(&mut self, lr: f64) {
        for e in self.entries.values_mut() {
            for (p, g) in e.value.data_mut().iter_mut().zip(e.grad.data()) {
                *p -= lr * g;
            }
        }
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn grad_max_abs(&self) -> f64 {
        self.entries
            .values()
            .fold(0.0, |m, e| m.max(e.grad.max_abs()))
    }

    /// True if any parameter or gradient holds a non-finite value.
    pub fn all_finite(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.value.is_finite() && e.grad.is_finite())
    }

    /// Copy every entry of `other` under a name prefix filter into `self`.
    pub fn absorb(&mut self, other: &ParamStore, prefix: &str) {
        for (name, e) in &other.entries {
            if name.starts_with(prefix) {
                self.entries.insert(name.clone(), e.clone());
            }
        }
    }

    /// New store holding only the parameters under the given prefixes.
    pub fn subset(&self, prefixes: &[&str]) -> ParamStore {
        let mut out = ParamStore::new(self.seed);
        for p in prefixes {
            out.absorb(self, p);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::new(7);
        a.init_linear_weight("w1", 4, 4);
        a.init_linear_weight("w2", 4, 4);
        let mut b = ParamStore::new(7);
        b.init_linear_weight("w2", 4, 4);
        b.init_linear_weight("w1", 4, 4);
        assert_eq!(a.get("w1"), b.get("w1"));
        assert_eq!(a.get("w2"), b.get("w2"));
    }

    #[test]
    fn grad_shape_enforced() {
        let mut p = ParamStore::new(0);
        p.init_zeros("b", vec![3]);
        assert!(p.accumulate_grad("b", &Tensor::zeros(vec![4])).is_err());
        assert!(p.accumulate_grad("b", &Tensor::vector(&[1.0, 2.0, 3.0])).is_ok());
        assert_eq!(p.grad("b").unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = ParamStore::new(0);
        p.insert("w", Tensor::vector(&[1.0]));
        p.accumulate_grad("w", &Tensor::vector(&[2.0])).unwrap();
        p.sgd_step(0.5);
        assert_eq!(p.get("w").unwrap().data(), &[0.0]);
    }
}
