use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Normal { std: f64 },
}

/// Named, ordered collection of model parameters.
///
/// Every parameter draws its initial values from its own generator, keyed by
/// the model seed and the parameter name. Two models built from the same seed
/// therefore agree on every parameter they share, whatever else they contain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<ArrayD<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let tensor = match init {
            Init::Zeros => ArrayD::zeros(IxDyn(shape)),
            Init::Normal { std } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
                let normal = Normal::new(0.0, std).expect("finite std");
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
            }
        };
        let id = self.tensors.len();
        self.names.push(name.to_owned());
        self.tensors.push(tensor);
        self.index.insert(name.to_owned(), id);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ArrayD<f64>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Overwrite the named tensor, checking its shape.
    pub fn assign(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let slot = self.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` expects {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn zeros_like(&self) -> Grads {
        Grads {
            tensors: self
                .tensors
                .iter()
                .map(|t| ArrayD::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [ArrayD<f64>] {
        &mut self.tensors
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    tensors: Vec<ArrayD<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[ArrayD<f64>] {
        &self.tensors
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

// FNV-1a; stable across toolchains, unlike `DefaultHasher`.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_name_same_seed_same_values() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        b.register("other", &[7], Init::Normal { std: 1.0 }, 3);
        let ia = a.register("w", &[4, 4], Init::Normal { std: 1.0 }, 3);
        let ib = b.register("w", &[4, 4], Init::Normal { std: 1.0 }, 3);
        assert_eq!(a.get(ia), b.get(ib));
    }

    #[test]
    fn different_names_draw_differently() {
        let mut s = ParamStore::new();
        let x = s.register("x", &[8], Init::Normal { std: 1.0 }, 0);
        let y = s.register("y", &[8], Init::Normal { std: 1.0 }, 0);
        assert_ne!(s.get(x), s.get(y));
    }

    #[test]
    fn assign_rejects_wrong_shape() {
        let mut s = ParamStore::new();
        s.register("x", &[2, 2], Init::Zeros, 0);
        assert!(s.assign("x", ArrayD::zeros(IxDyn(&[4]))).is_err());
        assert!(s.assign("x", ArrayD::ones(IxDyn(&[2, 2]))).is_ok());
        assert!(s.assign("nope", ArrayD::ones(IxDyn(&[2, 2]))).is_err());
    }
}
