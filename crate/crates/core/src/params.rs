//! Named parameter collections.

use std::collections::BTreeMap;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};

/// Ordered map from parameter name to matrix. Iteration order is the name order,
/// which keeps checkpoints and checksums deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params(BTreeMap<String, Array2<f64>>);

/// Tape handles for a bound [`Params`].
#[derive(Clone, Debug, Default)]
pub struct Bound(BTreeMap<String, Var>);

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .0
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self(pairs.into_iter().collect())
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.0.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// Leaves on `tape`; trainable when `trainable`, constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.0
                .iter()
                .map(|(k, v)| {
                    let var = if trainable {
                        tape.param(v.clone())
                    } else {
                        tape.constant(v.clone())
                    };
                    (k.clone(), var)
                })
                .collect(),
        )
    }

    /// Gradients that reached the bound leaves.
    pub fn collect_grads(tape: &Tape, bound: &Bound) -> BTreeMap<String, Array2<f64>> {
        bound
            .iter()
            .filter_map(|(k, v)| tape.grad(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }

    /// Same names and shapes on both sides.
    pub fn aligned_with(&self, other: &Params) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(other.0.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.dim() == vb.dim())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.0 {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl FromIterator<(String, Array2<f64>)> for Params {
    fn from_iter<T: IntoIterator<Item = (String, Array2<f64>)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn checksum_sees_single_bit_changes() {
        let mut p = Params::new();
        p.insert("a", array![[1.0, 2.0]]);
        let before = p.checksum();
        assert_eq!(before, p.clone().checksum());
        p.get_mut("a").unwrap()[[0, 1]] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(before, p.checksum());
    }
}
