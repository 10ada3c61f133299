use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    /// Batch-norm running statistics: stored and checkpointed, never trained.
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, Self::RunningMean | Self::RunningVar)
    }

    /// Weight decay applies to convolution and linear weights only.
    pub fn decays(self) -> bool {
        matches!(self, Self::Weight)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Fan-in used for initialization (weights only).
    pub fan_in: usize,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered, named learnable arrays with gradient slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub seed: u64,
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: IndexMap::new(),
        }
    }

    /// Registers a zero-valued entry and returns its index.
    pub fn declare(&mut self, name: &str, kind: ParamKind, shape: &[usize], fan_in: usize) -> usize {
        let n: usize = shape.iter().product();
        let init = match kind {
            ParamKind::NormScale | ParamKind::RunningVar => T::one(),
            _ => T::zero(),
        };
        let (idx, previous) = self.entries.insert_full(
            name.to_string(),
            Param {
                kind,
                shape: shape.to_vec(),
                fan_in,
                value: vec![init; n],
                grad: vec![T::zero(); n],
            },
        );
        assert!(previous.is_none(), "duplicate parameter name {name}");
        idx
    }

    /// Draws every weight from `U(-b, b)` with `b = sqrt(6 / fan_in)`, in
    /// declaration order from a ChaCha8 stream seeded with `self.seed`.
    /// Biases, shifts and running means start at 0; scales and running
    /// variances at 1.
    pub fn initialize(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for p in self.entries.values_mut() {
            if p.kind == ParamKind::Weight {
                let bound = (6.0 / p.fan_in.max(1) as f64).sqrt();
                for v in &mut p.value {
                    *v = T::of(rng.gen_range(-bound..bound));
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.entries[idx]
    }

    #[inline]
    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.entries[idx]
    }

    pub fn value(&self, idx: usize) -> &[T] {
        &self.entries[idx].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind.trainable())
            .map(|p| p.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, idx: usize, g: &[T]) {
        let p = &mut self.entries[idx];
        assert_eq!(p.grad.len(), g.len(), "gradient shape mismatch");
        for (a, &b) in p.grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in self.entries.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = *g * s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            kind: p.kind,
                            shape: p.shape.clone(),
                            fan_in: p.fan_in,
                            value: p.value.iter().map(|&v| U::of(v.as_f64())).collect(),
                            grad: p.grad.iter().map(|&v| U::of(v.as_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// True when both stores declare the same names, kinds and shapes in
    /// the same order.
    pub fn same_layout<U>(&self, other: &ParamStore<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.kind == b.kind && a.shape == b.shape)
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.entries {
            h.update(name.as_bytes());
            for &d in &p.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &p.value {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(seed: u64) -> ParamStore<f32> {
        let mut s = ParamStore::new(seed);
        s.declare("w", ParamKind::Weight, &[4, 3], 3);
        s.declare("b", ParamKind::Bias, &[4], 0);
        s.declare("g", ParamKind::NormScale, &[4], 0);
        s.initialize();
        s
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = store(3);
        let b = store(3);
        assert_eq!(a, b);
        assert_ne!(a, store(4));
        let bound = (6.0f32 / 3.0).sqrt();
        assert!(a.value(0).iter().all(|v| v.abs() < bound));
        assert!(a.value(1).iter().all(|&v| v == 0.0));
        assert!(a.value(2).iter().all(|&v| v == 1.0));
        assert_eq!(a.trainable_count(), 20);
    }

    #[test]
    fn cast_preserves_layout_and_hash_detects_change() {
        let a = store(1);
        let wide: ParamStore<f64> = a.cast();
        assert!(a.same_layout(&wide));
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.get_mut(0).value[0] += 1.0;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new(0);
        s.declare("w", ParamKind::Weight, &[1], 1);
        s.declare("w", ParamKind::Weight, &[1], 1);
    }
}
